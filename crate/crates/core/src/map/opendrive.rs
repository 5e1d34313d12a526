//! Parser for the supported OpenDRIVE subset: `road` (line/arc plan view, constant-width
//! lanes), `link`, `junction` and `signal`.

use super::*;
use log::warn;
use roxmltree::{Document, Node};

struct Ctx {
    ignored: usize,
}

impl Ctx {
    fn ignore(&mut self, node: Node) {
        if node.is_element() {
            self.ignored += 1;
            log::debug!("ignoring unsupported element <{}>", node.tag_name().name());
        }
    }
}

fn attr<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, MapError> {
    node.attribute(name).ok_or_else(|| {
        MapError::MalformedXml(format!(
            "<{}> is missing attribute `{name}`",
            node.tag_name().name()
        ))
    })
}

fn attr_f64(node: Node, name: &str) -> Result<f64, MapError> {
    let raw = attr(node, name)?;
    let v: f64 = raw.trim().parse().map_err(|_| {
        MapError::InvalidValue(format!(
            "<{}> attribute `{name}`=`{raw}` is not a number",
            node.tag_name().name()
        ))
    })?;
    if !v.is_finite() {
        return Err(MapError::InvalidValue(format!("`{name}` must be finite")));
    }
    Ok(v)
}

fn opt_f64(node: Node, name: &str) -> Result<Option<f64>, MapError> {
    match node.attribute(name) {
        None => Ok(None),
        Some(_) => attr_f64(node, name).map(Some),
    }
}

fn attr_u32(node: Node, name: &str) -> Result<u32, MapError> {
    let raw = attr(node, name)?;
    raw.trim().parse().map_err(|_| {
        MapError::InvalidValue(format!(
            "<{}> attribute `{name}`=`{raw}` is not a non-negative integer id",
            node.tag_name().name()
        ))
    })
}

fn attr_i32(node: Node, name: &str) -> Result<i32, MapError> {
    let raw = attr(node, name)?;
    raw.trim().parse().map_err(|_| {
        MapError::InvalidValue(format!(
            "<{}> attribute `{name}`=`{raw}` is not an integer",
            node.tag_name().name()
        ))
    })
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|c| c.is_element())
}

fn contact_point(raw: Option<&str>) -> Result<Option<ContactPoint>, MapError> {
    match raw {
        None => Ok(None),
        Some("start") => Ok(Some(ContactPoint::Start)),
        Some("end") => Ok(Some(ContactPoint::End)),
        Some(other) => Err(MapError::InvalidValue(format!("contactPoint `{other}`"))),
    }
}

fn road_mark(raw: Option<&str>) -> RoadMark {
    match raw {
        Some(t) if t.starts_with("solid") => RoadMark::Solid,
        Some(t) if t.starts_with("broken") => RoadMark::Broken,
        _ => RoadMark::None,
    }
}

/// Parse OpenDRIVE text. Elements outside the subset are skipped and counted in
/// [`RoadNetwork::ignored_elements`].
pub fn parse_opendrive(xml_text: &str) -> Result<RoadNetwork, MapError> {
    let doc = Document::parse(xml_text).map_err(|e| MapError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(MapError::MalformedXml(format!(
            "root element is <{}>, expected <OpenDRIVE>",
            root.tag_name().name()
        )));
    }
    let mut ctx = Ctx { ignored: 0 };
    let mut name = String::new();
    let mut roads = Vec::new();
    let mut junctions = Vec::new();
    let mut signal_nodes = Vec::new();

    for child in elements(root) {
        match child.tag_name().name() {
            "header" => {
                name = child.attribute("name").unwrap_or_default().to_string();
            }
            "road" => {
                let (road, sigs) = parse_road(child, &mut ctx)?;
                signal_nodes.extend(sigs.into_iter().map(|n| (road.id, n)));
                roads.push(road);
            }
            "junction" => junctions.push(parse_junction(child, &mut ctx)?),
            _ => ctx.ignore(child),
        }
    }

    // Junction connecting roads live inside their junction record.
    let (connecting, ordinary): (Vec<Road>, Vec<Road>) =
        roads.into_iter().partition(|r| r.junction.is_some());
    for road in connecting {
        let jid = road.junction.unwrap();
        match junctions.iter_mut().find(|j: &&mut Junction| j.id == jid) {
            Some(j) => j.connecting_roads.push(road),
            None => {
                return Err(MapError::DanglingLink {
                    from: format!("road {}", road.id),
                    target: format!("junction {jid}"),
                })
            }
        }
    }

    let mut net = RoadNetwork {
        schema_version: NETWORK_SCHEMA_VERSION,
        name,
        roads: ordinary,
        junctions,
        signals: Vec::new(),
        ignored_elements: 0,
    };

    for (road_id, node) in signal_nodes {
        let kind_raw = node.attribute("type").unwrap_or_default();
        let Some(kind) = SignalKind::from_type(kind_raw) else {
            ctx.ignored += 1;
            continue;
        };
        let road = net.road(road_id).expect("signal road exists");
        let s = attr_f64(node, "s")?;
        let t = attr_f64(node, "t")?;
        let z = opt_f64(node, "zOffset")?.unwrap_or(0.0);
        let (p, _) = road.pose_at(s, t);
        let orientation = match node.attribute("orientation") {
            Some("+") => Orientation::Forward,
            Some("-") => Orientation::Backward,
            _ => Orientation::Both,
        };
        net.signals.push(Signal {
            id: attr_u32(node, "id")?,
            kind,
            road: road_id,
            s,
            t,
            orientation,
            position: Point3::new(p.x, p.y, z),
            value: opt_f64(node, "value")?,
        });
    }

    net.ignored_elements = ctx.ignored;
    if ctx.ignored > 0 {
        warn!("ignored {} unsupported OpenDRIVE elements", ctx.ignored);
    }
    net.validate()?;
    Ok(net)
}

fn parse_link(node: Node) -> Result<Option<RoadLink>, MapError> {
    let element = match attr(node, "elementType")? {
        "road" => LinkElement::Road(attr_u32(node, "elementId")?),
        "junction" => LinkElement::Junction(attr_u32(node, "elementId")?),
        other => return Err(MapError::InvalidValue(format!("elementType `{other}`"))),
    };
    Ok(Some(RoadLink {
        element,
        contact_point: contact_point(node.attribute("contactPoint"))?,
    }))
}

fn parse_road<'a, 'i>(
    node: Node<'a, 'i>,
    ctx: &mut Ctx,
) -> Result<(Road, Vec<Node<'a, 'i>>), MapError> {
    let id = attr_u32(node, "id")?;
    let junction = match attr(node, "junction")?.trim() {
        "-1" => None,
        _ => Some(attr_u32(node, "junction")?),
    };
    let mut road = Road {
        id,
        name: node.attribute("name").unwrap_or_default().to_string(),
        length: attr_f64(node, "length")?,
        junction,
        speed_limit: DEFAULT_SPEED_LIMIT,
        geometry: Vec::new(),
        lane_sections: Vec::new(),
        predecessor: None,
        successor: None,
    };
    let mut signals = Vec::new();
    let mut saw_plan_view = false;

    for child in elements(node) {
        match child.tag_name().name() {
            "link" => {
                for l in elements(child) {
                    match l.tag_name().name() {
                        "predecessor" => road.predecessor = parse_link(l)?,
                        "successor" => road.successor = parse_link(l)?,
                        _ => ctx.ignore(l),
                    }
                }
            }
            "type" => {
                for sp in elements(child) {
                    if sp.tag_name().name() != "speed" {
                        ctx.ignore(sp);
                        continue;
                    }
                    let max = attr_f64(sp, "max")?;
                    road.speed_limit = match sp.attribute("unit").unwrap_or("m/s") {
                        "km/h" => max / 3.6,
                        "mph" => max * 0.44704,
                        _ => max,
                    };
                }
            }
            "planView" => {
                saw_plan_view = true;
                for g in elements(child) {
                    if g.tag_name().name() != "geometry" {
                        ctx.ignore(g);
                        continue;
                    }
                    let mut kind = None;
                    for shape in elements(g) {
                        match shape.tag_name().name() {
                            "line" => kind = Some(GeometryKind::Line),
                            "arc" => {
                                kind = Some(GeometryKind::Arc {
                                    curvature: attr_f64(shape, "curvature")?,
                                })
                            }
                            _ => ctx.ignore(shape),
                        }
                    }
                    let Some(kind) = kind else {
                        // spiral / poly3 / paramPoly3 are outside the subset
                        continue;
                    };
                    road.geometry.push(Geometry {
                        s: attr_f64(g, "s")?,
                        x: attr_f64(g, "x")?,
                        y: attr_f64(g, "y")?,
                        hdg: attr_f64(g, "hdg")?,
                        length: attr_f64(g, "length")?,
                        kind,
                    });
                }
            }
            "lanes" => {
                for sec in elements(child) {
                    if sec.tag_name().name() == "laneSection" {
                        road.lane_sections.push(parse_lane_section(sec, ctx)?);
                    } else {
                        ctx.ignore(sec);
                    }
                }
            }
            "signals" => {
                for s in elements(child) {
                    if s.tag_name().name() == "signal" {
                        signals.push(s);
                    } else {
                        ctx.ignore(s);
                    }
                }
            }
            _ => ctx.ignore(child),
        }
    }
    if !saw_plan_view || road.geometry.is_empty() {
        return Err(MapError::MissingGeometry(id));
    }
    road.geometry
        .sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    road.lane_sections
        .sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    Ok((road, signals))
}

fn parse_lane_section(node: Node, ctx: &mut Ctx) -> Result<LaneSection, MapError> {
    let mut section = LaneSection {
        s: attr_f64(node, "s")?,
        center_mark: RoadMark::None,
        lanes: Vec::new(),
    };
    for side in elements(node) {
        let side_name = side.tag_name().name();
        if !matches!(side_name, "left" | "center" | "right") {
            ctx.ignore(side);
            continue;
        }
        for ln in elements(side) {
            if ln.tag_name().name() != "lane" {
                ctx.ignore(ln);
                continue;
            }
            let id = attr_i32(ln, "id")?;
            let mut lane = Lane {
                id,
                lane_type: ln.attribute("type").unwrap_or("none").to_string(),
                width: 0.0,
                road_mark: RoadMark::None,
                predecessor: None,
                successor: None,
            };
            let mut widths = 0;
            for part in elements(ln) {
                match part.tag_name().name() {
                    "width" => {
                        widths += 1;
                        if widths == 1 {
                            lane.width = attr_f64(part, "a")?;
                        } else {
                            // only constant-width lanes are supported
                            ctx.ignored += 1;
                        }
                        for coef in ["b", "c", "d"] {
                            if opt_f64(part, coef)?.unwrap_or(0.0) != 0.0 {
                                warn!("lane {id}: non-constant width coefficients ignored");
                                ctx.ignored += 1;
                                break;
                            }
                        }
                    }
                    "roadMark" => lane.road_mark = road_mark(part.attribute("type")),
                    "link" => {
                        for l in elements(part) {
                            match l.tag_name().name() {
                                "predecessor" => lane.predecessor = Some(attr_i32(l, "id")?),
                                "successor" => lane.successor = Some(attr_i32(l, "id")?),
                                _ => ctx.ignore(l),
                            }
                        }
                    }
                    _ => ctx.ignore(part),
                }
            }
            if id == 0 {
                section.center_mark = lane.road_mark;
            } else {
                section.lanes.push(lane);
            }
        }
    }
    section.lanes.sort_by_key(|l| l.id);
    Ok(section)
}

fn parse_junction(node: Node, ctx: &mut Ctx) -> Result<Junction, MapError> {
    let mut j = Junction {
        id: attr_u32(node, "id")?,
        name: node.attribute("name").unwrap_or_default().to_string(),
        connections: Vec::new(),
        connecting_roads: Vec::new(),
    };
    for c in elements(node) {
        if c.tag_name().name() != "connection" {
            ctx.ignore(c);
            continue;
        }
        let mut conn = Connection {
            id: attr_u32(c, "id")?,
            incoming_road: attr_u32(c, "incomingRoad")?,
            connecting_road: attr_u32(c, "connectingRoad")?,
            contact_point: contact_point(c.attribute("contactPoint"))?
                .unwrap_or(ContactPoint::Start),
            lane_links: Vec::new(),
        };
        for ll in elements(c) {
            if ll.tag_name().name() == "laneLink" {
                conn.lane_links
                    .push((attr_i32(ll, "from")?, attr_i32(ll, "to")?));
            } else {
                ctx.ignore(ll);
            }
        }
        j.connections.push(conn);
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(extra_link: &str) -> String {
        format!(
            r#"<?xml version="1.0"?>
<OpenDRIVE>
  <header name="t"/>
  <road id="1" length="100" junction="-1">
    <link>{extra_link}</link>
    <planView><geometry s="0" x="0" y="0" hdg="0" length="100"><line/></geometry></planView>
    <elevationProfile/>
    <lanes><laneSection s="0">
      <left><lane id="1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane></left>
      <center><lane id="0" type="none"><roadMark type="solid"/></lane></center>
      <right><lane id="-1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane></right>
    </laneSection></lanes>
  </road>
</OpenDRIVE>"#
        )
    }

    #[test]
    fn minimal_straight_road() {
        let net = parse_opendrive(&straight("")).unwrap();
        assert_eq!(net.roads.len(), 1);
        assert_eq!(net.junctions.len(), 0);
        assert_eq!(net.ignored_elements, 1);
        let sec = &net.roads[0].lane_sections[0];
        assert_eq!(sec.center_mark, RoadMark::Solid);
        assert_eq!(sec.lane_center_offset(-1), Some(-1.75));
    }

    #[test]
    fn dangling_successor_rejected() {
        let err = parse_opendrive(&straight(
            r#"<successor elementType="road" elementId="99" contactPoint="start"/>"#,
        ))
        .unwrap_err();
        assert!(matches!(err, MapError::DanglingLink { .. }), "{err:?}");
    }

    #[test]
    fn malformed_xml_rejected() {
        assert!(matches!(
            parse_opendrive("<OpenDRIVE><road>"),
            Err(MapError::MalformedXml(_))
        ));
    }

    #[test]
    fn road_without_plan_view_rejected() {
        let xml = r#"<OpenDRIVE><road id="4" length="10" junction="-1"><lanes/></road></OpenDRIVE>"#;
        assert_eq!(parse_opendrive(xml), Err(MapError::MissingGeometry(4)));
    }

    #[test]
    fn zero_width_lane_rejected() {
        let xml = straight("").replace(r#"a="3.5" b="0" c="0" d="0"/></lane></right>"#, r#"a="0"/></lane></right>"#);
        assert!(matches!(parse_opendrive(&xml), Err(MapError::InvalidValue(_))));
    }

    #[test]
    fn arc_pose_matches_circle() {
        let g = Geometry {
            s: 0.0,
            x: 0.0,
            y: 0.0,
            hdg: 0.0,
            length: std::f64::consts::PI * 5.0,
            kind: GeometryKind::Arc { curvature: 0.1 },
        };
        // Half circle of radius 10 centred at (0, 10).
        let (p, h) = g.pose(std::f64::consts::PI * 10.0);
        assert!((p.x).abs() < 1e-9 && (p.y - 20.0).abs() < 1e-9);
        assert!((h - std::f64::consts::PI).abs() < 1e-12);
    }
}
