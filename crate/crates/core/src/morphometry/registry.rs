//! Parameter registry: rule catalog, validation, topological ordering,
//! the registry text format, and the shipped default registries.

use std::collections::BTreeMap;

use super::{MorphometryError, ParamKind};

/// Built-in derivation rules. Numeric rule arguments (radii, offsets) are
/// part of the rule; parameter inputs are named in `ParamSpec::inputs`.
#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    /// No derivation: the value is supplied (propagated landmark).
    Primary,
    Midpoint,
    AxisThrough,
    /// Fits a sphere to all mesh vertices within the given geodesic
    /// radius (mm) of the seed point. Inputs: mesh reference, seed point.
    SphereFitRegion { radius: f64 },
    PlaneFromPoints,
    /// Plane through a point with the direction of an axis as normal.
    PlanePointNormal,
    /// Translates a plane along its normal by the given distance (mm).
    OffsetPlane { distance: f64 },
    ProjectOnPlane,
    Distance,
    AngleBetween,
    /// Vertex of a mesh (or point of a point set) extremal along an axis
    /// direction. Inputs: mesh reference or point set, direction axis.
    ExtremalPoint,
}

impl Rule {
    /// The value kind this rule produces; `None` for primaries (declared
    /// kind applies).
    pub fn output_kind(&self) -> Option<ParamKind> {
        Some(match self {
            Rule::Primary => return None,
            Rule::Midpoint | Rule::ProjectOnPlane | Rule::ExtremalPoint => ParamKind::Point,
            Rule::AxisThrough => ParamKind::Axis,
            Rule::SphereFitRegion { .. } => ParamKind::Sphere,
            Rule::PlaneFromPoints | Rule::PlanePointNormal | Rule::OffsetPlane { .. } => {
                ParamKind::Plane
            }
            Rule::Distance => ParamKind::Length,
            Rule::AngleBetween => ParamKind::Angle,
        })
    }

    pub fn arity(&self) -> usize {
        match self {
            Rule::Primary => 0,
            Rule::OffsetPlane { .. } => 1,
            Rule::Midpoint
            | Rule::AxisThrough
            | Rule::SphereFitRegion { .. }
            | Rule::PlanePointNormal
            | Rule::ProjectOnPlane
            | Rule::Distance
            | Rule::AngleBetween
            | Rule::ExtremalPoint => 2,
            Rule::PlaneFromPoints => 3,
        }
    }

    /// Which input positions may name a context mesh (`@segmented` /
    /// `@fitted`) instead of a parameter.
    pub fn mesh_slot(&self) -> Option<usize> {
        match self {
            Rule::SphereFitRegion { .. } | Rule::ExtremalPoint => Some(0),
            _ => None,
        }
    }

    pub fn format(&self) -> String {
        match self {
            Rule::Primary => "primary".into(),
            Rule::Midpoint => "midpoint".into(),
            Rule::AxisThrough => "axis_through".into(),
            Rule::SphereFitRegion { radius } => format!("sphere_fit_region({radius})"),
            Rule::PlaneFromPoints => "plane_from_points".into(),
            Rule::PlanePointNormal => "plane_point_normal".into(),
            Rule::OffsetPlane { distance } => format!("offset_plane({distance})"),
            Rule::ProjectOnPlane => "project_on_plane".into(),
            Rule::Distance => "distance".into(),
            Rule::AngleBetween => "angle".into(),
            Rule::ExtremalPoint => "extremal_point".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Rule, MorphometryError> {
        let s = s.trim();
        let (head, arg) = match s.find('(') {
            Some(open) => {
                let close = s
                    .rfind(')')
                    .ok_or_else(|| MorphometryError::Malformed(format!("unclosed '(' in '{s}'")))?;
                let arg: f64 = s[open + 1..close].trim().parse().map_err(|_| {
                    MorphometryError::Malformed(format!("bad numeric argument in '{s}'"))
                })?;
                (&s[..open], Some(arg))
            }
            None => (s, None),
        };
        let rule = match (head, arg) {
            ("primary", None) => Rule::Primary,
            ("midpoint", None) => Rule::Midpoint,
            ("axis_through", None) => Rule::AxisThrough,
            ("sphere_fit_region", Some(radius)) if radius > 0.0 => {
                Rule::SphereFitRegion { radius }
            }
            ("plane_from_points", None) => Rule::PlaneFromPoints,
            ("plane_point_normal", None) => Rule::PlanePointNormal,
            ("offset_plane", Some(distance)) => Rule::OffsetPlane { distance },
            ("project_on_plane", None) => Rule::ProjectOnPlane,
            ("distance", None) => Rule::Distance,
            ("angle", None) => Rule::AngleBetween,
            ("extremal_point", None) => Rule::ExtremalPoint,
            _ => return Err(MorphometryError::UnknownRule(s.to_string())),
        };
        Ok(rule)
    }
}

/// One registry entry.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub rule: Rule,
    pub inputs: Vec<String>,
    /// Osteophyte-risk adjustment weight in [0, 1]; meaningful for
    /// primary landmarks only.
    pub weight: f64,
}

/// Validated, topologically ordered parameter registry.
#[derive(Debug, Clone)]
pub struct ParamRegistry {
    specs: Vec<ParamSpec>,
    index: BTreeMap<String, usize>,
    order: Vec<usize>,
}

impl ParamRegistry {
    pub fn new(specs: Vec<ParamSpec>) -> Result<Self, MorphometryError> {
        let mut index = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.name.is_empty() || s.name.starts_with('@') {
                return Err(MorphometryError::Malformed(format!("bad name '{}'", s.name)));
            }
            if index.insert(s.name.clone(), i).is_some() {
                return Err(MorphometryError::DuplicateName(s.name.clone()));
            }
            if !(0.0..=1.0).contains(&s.weight) {
                return Err(MorphometryError::Malformed(format!(
                    "weight for '{}' outside [0, 1]",
                    s.name
                )));
            }
        }
        for s in &specs {
            if s.inputs.len() != s.rule.arity() {
                return Err(MorphometryError::BadInputs {
                    param: s.name.clone(),
                    rule: s.rule.format(),
                    expected: "a different number of inputs",
                });
            }
            if let Some(yields) = s.rule.output_kind() {
                if yields != s.kind {
                    return Err(MorphometryError::KindMismatch {
                        param: s.name.clone(),
                        declared: s.kind,
                        yields,
                    });
                }
            }
            for (slot, input) in s.inputs.iter().enumerate() {
                if input.starts_with('@') {
                    if s.rule.mesh_slot() != Some(slot)
                        || (input != "@segmented" && input != "@fitted")
                    {
                        return Err(MorphometryError::UnknownInput {
                            param: s.name.clone(),
                            input: input.clone(),
                        });
                    }
                } else if !index.contains_key(input) {
                    return Err(MorphometryError::UnknownInput {
                        param: s.name.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        let order = topo_order(&specs, &index)?;
        Ok(Self { specs, index, order })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    /// Indices in a valid evaluation order.
    pub fn evaluation_order(&self) -> impl Iterator<Item = &ParamSpec> {
        self.order.iter().map(|&i| &self.specs[i])
    }

    pub fn primaries(&self) -> impl Iterator<Item = &ParamSpec> {
        self.specs.iter().filter(|s| s.rule == Rule::Primary)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Parses the registry text format: records introduced by `[param]`,
    /// `key = value` lines, `#` comments. Keys: `name`, `kind`, `rule`,
    /// `inputs` (comma-separated), `weight`.
    pub fn from_text(text: &str) -> Result<Self, MorphometryError> {
        let mut specs: Vec<ParamSpec> = Vec::new();
        let mut current: Option<RecordDraft> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[param]" {
                if let Some(draft) = current.take() {
                    specs.push(draft.finish()?);
                }
                current = Some(RecordDraft::default());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(MorphometryError::Malformed(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let Some(draft) = current.as_mut() else {
                return Err(MorphometryError::Malformed(format!(
                    "line {}: field outside a [param] record",
                    lineno + 1
                )));
            };
            let value = value.trim();
            match key.trim() {
                "name" => draft.name = Some(value.to_string()),
                "kind" => {
                    draft.kind = Some(ParamKind::parse(value).ok_or_else(|| {
                        MorphometryError::Malformed(format!("unknown kind '{value}'"))
                    })?)
                }
                "rule" => draft.rule = Some(Rule::parse(value)?),
                "inputs" => {
                    draft.inputs = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "weight" => {
                    draft.weight = Some(value.parse().map_err(|_| {
                        MorphometryError::Malformed(format!("bad weight '{value}'"))
                    })?)
                }
                other => {
                    return Err(MorphometryError::Malformed(format!(
                        "line {}: unknown field '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if let Some(draft) = current.take() {
            specs.push(draft.finish()?);
        }
        Self::new(specs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.specs {
            out.push_str("[param]\n");
            out.push_str(&format!("name = {}\n", s.name));
            out.push_str(&format!("kind = {}\n", s.kind));
            out.push_str(&format!("rule = {}\n", s.rule.format()));
            if !s.inputs.is_empty() {
                out.push_str(&format!("inputs = {}\n", s.inputs.join(", ")));
            }
            out.push_str(&format!("weight = {}\n\n", s.weight));
        }
        out
    }
}

#[derive(Default)]
struct RecordDraft {
    name: Option<String>,
    kind: Option<ParamKind>,
    rule: Option<Rule>,
    inputs: Vec<String>,
    weight: Option<f64>,
}

impl RecordDraft {
    fn finish(self) -> Result<ParamSpec, MorphometryError> {
        let name = self
            .name
            .ok_or_else(|| MorphometryError::Malformed("record without name".into()))?;
        let kind = self
            .kind
            .ok_or_else(|| MorphometryError::Malformed(format!("'{name}' without kind")))?;
        let rule = self.rule.unwrap_or(Rule::Primary);
        Ok(ParamSpec { name, kind, rule, inputs: self.inputs, weight: self.weight.unwrap_or(1.0) })
    }
}

fn topo_order(
    specs: &[ParamSpec],
    index: &BTreeMap<String, usize>,
) -> Result<Vec<usize>, MorphometryError> {
    let n = specs.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in specs.iter().enumerate() {
        for input in &s.inputs {
            if let Some(&j) = index.get(input) {
                dependents[j].push(i);
                indegree[i] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop() {
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                queue.push(d);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n)
            .find(|&i| indegree[i] > 0)
            .map(|i| specs[i].name.clone())
            .unwrap_or_default();
        return Err(MorphometryError::CycleDetected(stuck));
    }
    Ok(order)
}

fn primary(name: &str, weight: f64) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        kind: ParamKind::Point,
        rule: Rule::Primary,
        inputs: Vec::new(),
        weight,
    }
}

fn derived(name: &str, kind: ParamKind, rule: Rule, inputs: &[&str]) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        kind,
        rule,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        weight: 1.0,
    }
}

/// The shipped femoral registry: 16 primary landmarks and the derived
/// chain up to the distal resection plane. `distal_resection_depth` is
/// the cut height above the most distal condylar point, millimetres.
pub fn default_femoral_registry(distal_resection_depth: f64) -> ParamRegistry {
    use ParamKind::*;
    let specs = vec![
        // anterior and epicondylar landmarks: low osteophyte risk
        primary("AP Sizing Point", 1.0),
        primary("Medial Anterior", 1.0),
        primary("Lateral Anterior", 1.0),
        primary("Medial Epicondyle", 1.0),
        primary("Lateral Epicondyle", 1.0),
        primary("Top Groove", 1.0),
        primary("Top Notch", 1.0),
        primary("Trochlea Center", 1.0),
        primary("Femoral Head Apex", 1.0),
        primary("Medial Shaft Point", 1.0),
        primary("Lateral Shaft Point", 1.0),
        primary("Anterior Shaft Point", 1.0),
        // distal / posterior condylar landmarks: high osteophyte risk
        primary("Medial Distal", 0.3),
        primary("Lateral Distal", 0.3),
        primary("Medial Posterior", 0.3),
        primary("Lateral Posterior", 0.3),
        // derived chain
        derived("Knee Center", Point, Rule::Midpoint, &["Top Notch", "Top Groove"]),
        derived(
            "Femoral Head Sphere",
            Sphere,
            Rule::SphereFitRegion { radius: 25.0 },
            &["@segmented", "Femoral Head Apex"],
        ),
        derived(
            "Mechanical Axis",
            Axis,
            Rule::AxisThrough,
            &["Femoral Head Sphere", "Knee Center"],
        ),
        derived(
            "Shaft Center",
            Point,
            Rule::Midpoint,
            &["Medial Shaft Point", "Lateral Shaft Point"],
        ),
        derived("Anatomical Axis", Axis, Rule::AxisThrough, &["Shaft Center", "Knee Center"]),
        derived(
            "Mechanical-Anatomical Angle",
            Angle,
            Rule::AngleBetween,
            &["Mechanical Axis", "Anatomical Axis"],
        ),
        derived(
            "Epicondylar Axis",
            Axis,
            Rule::AxisThrough,
            &["Medial Epicondyle", "Lateral Epicondyle"],
        ),
        derived(
            "Posterior Condylar Axis",
            Axis,
            Rule::AxisThrough,
            &["Medial Posterior", "Lateral Posterior"],
        ),
        derived(
            "Condylar Twist Angle",
            Angle,
            Rule::AngleBetween,
            &["Epicondylar Axis", "Posterior Condylar Axis"],
        ),
        derived(
            "Medial Condyle Sphere",
            Sphere,
            Rule::SphereFitRegion { radius: 18.0 },
            &["@segmented", "Medial Posterior"],
        ),
        derived(
            "Lateral Condyle Sphere",
            Sphere,
            Rule::SphereFitRegion { radius: 18.0 },
            &["@segmented", "Lateral Posterior"],
        ),
        derived("Distal Point", Point, Rule::ExtremalPoint, &["@segmented", "Mechanical Axis"]),
        derived(
            "Distal Contact Plane",
            Plane,
            Rule::PlanePointNormal,
            &["Distal Point", "Mechanical Axis"],
        ),
        // the mechanical axis points distally (head → knee), so the cut
        // sits at −depth along the normal, proximal of the contact plane
        derived(
            "Distal Resection Plane",
            Plane,
            Rule::OffsetPlane { distance: -distal_resection_depth },
            &["Distal Contact Plane"],
        ),
        derived(
            "Distal Condylar Plane",
            Plane,
            Rule::PlaneFromPoints,
            &["Medial Distal", "Lateral Distal", "Knee Center"],
        ),
        derived("Sizing Plane", Plane, Rule::PlanePointNormal, &["Knee Center", "Mechanical Axis"]),
        derived(
            "AP Sizing Proj",
            Point,
            Rule::ProjectOnPlane,
            &["AP Sizing Point", "Sizing Plane"],
        ),
        derived(
            "Medial Anterior Proj",
            Point,
            Rule::ProjectOnPlane,
            &["Medial Anterior", "Sizing Plane"],
        ),
        derived(
            "Medial Posterior Proj",
            Point,
            Rule::ProjectOnPlane,
            &["Medial Posterior", "Sizing Plane"],
        ),
        derived(
            "Lateral Anterior Proj",
            Point,
            Rule::ProjectOnPlane,
            &["Lateral Anterior", "Sizing Plane"],
        ),
        derived(
            "Lateral Posterior Proj",
            Point,
            Rule::ProjectOnPlane,
            &["Lateral Posterior", "Sizing Plane"],
        ),
        derived(
            "AP Size Medial",
            Length,
            Rule::Distance,
            &["Medial Anterior Proj", "Medial Posterior Proj"],
        ),
        derived(
            "AP Size Lateral",
            Length,
            Rule::Distance,
            &["Lateral Anterior Proj", "Lateral Posterior Proj"],
        ),
        derived("AP Size", Length, Rule::Distance, &["AP Sizing Proj", "Medial Posterior Proj"]),
        derived(
            "Epicondylar Width",
            Length,
            Rule::Distance,
            &["Medial Epicondyle", "Lateral Epicondyle"],
        ),
    ];
    ParamRegistry::new(specs).expect("default femoral registry is valid")
}

/// The shipped tibial registry: 7 primary landmarks and the derived chain
/// up to the (unsloped) tibial resection plane; the posterior slope is a
/// rotation applied by the tibial core chain.
pub fn default_tibial_registry(resection_depth: f64) -> ParamRegistry {
    use ParamKind::*;
    let specs = vec![
        // articular surfaces carry osteophyte risk; tubercle and malleoli
        // are reliable
        primary("Tibial Knee Center", 0.3),
        primary("Medial Plateau", 0.3),
        primary("Lateral Plateau", 0.3),
        primary("Plafond Center", 0.3),
        primary("Tibial Tubercle", 1.0),
        primary("Medial Malleolus", 1.0),
        primary("Lateral Malleolus", 1.0),
        derived(
            "Tibial Mechanical Axis",
            Axis,
            Rule::AxisThrough,
            &["Tibial Knee Center", "Plafond Center"],
        ),
        derived(
            "Tibial Proximal Axis",
            Axis,
            Rule::AxisThrough,
            &["Plafond Center", "Tibial Knee Center"],
        ),
        derived(
            "Plateau Axis",
            Axis,
            Rule::AxisThrough,
            &["Medial Plateau", "Lateral Plateau"],
        ),
        derived(
            "Malleolar Axis",
            Axis,
            Rule::AxisThrough,
            &["Medial Malleolus", "Lateral Malleolus"],
        ),
        derived(
            "Plateau Center",
            Point,
            Rule::Midpoint,
            &["Medial Plateau", "Lateral Plateau"],
        ),
        derived(
            "Plateau High Point",
            Point,
            Rule::ExtremalPoint,
            &["@segmented", "Tibial Proximal Axis"],
        ),
        derived(
            "Plateau Contact Plane",
            Plane,
            Rule::PlanePointNormal,
            &["Plateau High Point", "Tibial Proximal Axis"],
        ),
        // the proximal axis points proximally, so the cut sits at −depth
        // along the normal, distal of the plateau
        derived(
            "Tibial Cut Reference Plane",
            Plane,
            Rule::OffsetPlane { distance: -resection_depth },
            &["Plateau Contact Plane"],
        ),
        derived(
            "Plateau Width",
            Length,
            Rule::Distance,
            &["Medial Plateau", "Lateral Plateau"],
        ),
        derived(
            "Malleolar Width",
            Length,
            Rule::Distance,
            &["Medial Malleolus", "Lateral Malleolus"],
        ),
        derived(
            "Tibial Torsion Angle",
            Angle,
            Rule::AngleBetween,
            &["Plateau Axis", "Malleolar Axis"],
        ),
    ];
    ParamRegistry::new(specs).expect("default tibial registry is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registries_load_and_round_trip() {
        for reg in [default_femoral_registry(9.0), default_tibial_registry(8.0)] {
            let text = reg.to_text();
            let back = ParamRegistry::from_text(&text).unwrap();
            assert_eq!(back.len(), reg.len());
            for (a, b) in back.specs().iter().zip(reg.specs()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.kind, b.kind);
                assert_eq!(a.rule, b.rule);
                assert_eq!(a.inputs, b.inputs);
                assert_eq!(a.weight, b.weight);
            }
        }
    }

    #[test]
    fn femoral_registry_contains_validated_labels() {
        let reg = default_femoral_registry(9.0);
        let labels = [
            "AP Sizing Point",
            "Lateral Anterior",
            "Lateral Distal",
            "Lateral Epicondyle",
            "Lateral Posterior",
            "Medial Anterior",
            "Medial Distal",
            "Medial Epicondyle",
            "Medial Posterior",
            "Top Groove",
            "Top Notch",
        ];
        for label in labels {
            let spec = reg.get(label).unwrap_or_else(|| panic!("missing {label}"));
            assert_eq!(spec.rule, Rule::Primary);
        }
        assert_eq!(reg.primaries().count(), 16);
        assert_eq!(default_tibial_registry(8.0).primaries().count(), 7);
    }

    #[test]
    fn cycle_is_rejected_at_load() {
        let text = "\
[param]
name = a
kind = point
rule = midpoint
inputs = b, b

[param]
name = b
kind = point
rule = midpoint
inputs = a, a
";
        match ParamRegistry::from_text(text) {
            Err(MorphometryError::CycleDetected(_)) => {}
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_inputs_rejected() {
        let dup = vec![primary("x", 1.0), primary("x", 0.5)];
        assert!(matches!(ParamRegistry::new(dup), Err(MorphometryError::DuplicateName(_))));

        let unknown = vec![derived(
            "m",
            ParamKind::Point,
            Rule::Midpoint,
            &["nope", "nope"],
        )];
        assert!(matches!(
            ParamRegistry::new(unknown),
            Err(MorphometryError::UnknownInput { .. })
        ));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let bad = vec![
            primary("p", 1.0),
            primary("q", 1.0),
            derived("d", ParamKind::Axis, Rule::Midpoint, &["p", "q"]),
        ];
        assert!(matches!(ParamRegistry::new(bad), Err(MorphometryError::KindMismatch { .. })));
    }

    #[test]
    fn mesh_reference_only_in_mesh_slots() {
        let bad = vec![
            primary("p", 1.0),
            derived("d", ParamKind::Point, Rule::Midpoint, &["@segmented", "p"]),
        ];
        assert!(matches!(ParamRegistry::new(bad), Err(MorphometryError::UnknownInput { .. })));
    }

    #[test]
    fn evaluation_order_respects_dependencies() {
        let reg = default_femoral_registry(9.0);
        let mut seen = std::collections::BTreeSet::new();
        for spec in reg.evaluation_order() {
            for input in &spec.inputs {
                if !input.starts_with('@') {
                    assert!(seen.contains(input), "{} before its input {input}", spec.name);
                }
            }
            seen.insert(spec.name.clone());
        }
        assert_eq!(seen.len(), reg.len());
    }
}
