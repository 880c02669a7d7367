//! Base-relation statistics, access-path metadata, join-predicate
//! selectivities and multiplicative statistics updates.
//!
//! The catalog is the only source of numbers the cost model consumes. It is
//! immutable once loaded; [`Catalog::apply_update`] returns a new value.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown update target `{0}`")]
    UnknownTarget(String),
}

fn default_scan_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationMeta {
    pub name: String,
    pub cardinality: f64,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub indexed_on: Vec<String>,
    #[serde(default)]
    pub sorted_on: Option<String>,
    #[serde(default = "default_scan_factor")]
    pub scan_cost_factor: f64,
}

impl RelationMeta {
    pub fn has_attribute(&self, attr: &str) -> bool {
        self.attributes.iter().any(|a| a == attr)
    }

    pub fn is_indexed_on(&self, attr: &str) -> bool {
        self.indexed_on.iter().any(|a| a == attr)
    }

    pub fn is_sorted_on(&self, attr: &str) -> bool {
        self.sorted_on.as_deref() == Some(attr)
    }
}

/// A qualified attribute, written `relation.attribute`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttrRef {
    pub relation: String,
    pub attribute: String,
}

impl AttrRef {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        AttrRef {
            relation: relation.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

impl TryFrom<String> for AttrRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AttrRef> for String {
    fn from(a: AttrRef) -> String {
        a.to_string()
    }
}

impl std::str::FromStr for AttrRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((r, a)) if !r.is_empty() && !a.is_empty() && !a.contains('.') => {
                Ok(AttrRef::new(r.trim(), a.trim()))
            }
            _ => Err(format!("expected `relation.attribute`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinPredicate {
    pub left: AttrRef,
    pub right: AttrRef,
    pub selectivity: f64,
}

impl JoinPredicate {
    /// True when this predicate joins `a` and `b`, in either orientation.
    pub fn connects(&self, a: &AttrRef, b: &AttrRef) -> bool {
        (&self.left == a && &self.right == b) || (&self.left == b && &self.right == a)
    }

    pub fn touches_relation(&self, rel: &str) -> bool {
        self.left.relation == rel || self.right.relation == rel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub relations: Vec<RelationMeta>,
    pub predicates: Vec<JoinPredicate>,
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let cat: Catalog =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn relation(&self, name: &str) -> Option<&RelationMeta> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    /// Looks a predicate up by its two endpoints, in either order.
    pub fn predicate_between(&self, a: &AttrRef, b: &AttrRef) -> Option<usize> {
        self.predicates.iter().position(|p| p.connects(a, b))
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |m: String| Err(CatalogError::Validation(m));
        if self.relations.is_empty() {
            return bad("catalog declares no relations".into());
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.name.is_empty() || r.name.contains('.') || r.name.contains('=') {
                return bad(format!("invalid relation name `{}`", r.name));
            }
            if self.relations[..i].iter().any(|o| o.name == r.name) {
                return bad(format!("duplicate relation `{}`", r.name));
            }
            if !(r.cardinality.is_finite() && r.cardinality >= 1.0) {
                return bad(format!("relation `{}` cardinality must be >= 1", r.name));
            }
            if !(r.scan_cost_factor.is_finite() && r.scan_cost_factor > 0.0) {
                return bad(format!("relation `{}` scan_cost_factor must be > 0", r.name));
            }
            for (j, a) in r.attributes.iter().enumerate() {
                if a.is_empty() || a.contains('.') || a.contains('=') {
                    return bad(format!("invalid attribute `{a}` on `{}`", r.name));
                }
                if r.attributes[..j].contains(a) {
                    return bad(format!("duplicate attribute `{}.{a}`", r.name));
                }
            }
            for a in r.indexed_on.iter().chain(r.sorted_on.iter()) {
                if !r.has_attribute(a) {
                    return bad(format!("`{}` refers to undeclared attribute `{a}`", r.name));
                }
            }
        }
        for p in &self.predicates {
            for side in [&p.left, &p.right] {
                match self.relation(&side.relation) {
                    None => return bad(format!("predicate references undeclared relation `{}`", side.relation)),
                    Some(r) if !r.has_attribute(&side.attribute) => {
                        return bad(format!("predicate references undeclared attribute `{side}`"))
                    }
                    _ => {}
                }
            }
            if p.left.relation == p.right.relation {
                return bad(format!("predicate {}={} joins a relation with itself", p.left, p.right));
            }
            if !(p.selectivity > 0.0 && p.selectivity <= 1.0) {
                return bad(format!(
                    "predicate {}={} selectivity must be in (0, 1]",
                    p.left, p.right
                ));
            }
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if self.predicates[..i].iter().any(|o| o.connects(&p.left, &p.right)) {
                return bad(format!("duplicate predicate {}={}", p.left, p.right));
            }
        }
        Ok(())
    }

    /// Returns a catalog with the targeted number multiplied by `u.factor`.
    pub fn apply_update(&self, u: &StatUpdate) -> Result<Catalog, CatalogError> {
        if !(u.factor.is_finite() && u.factor > 0.0) {
            return Err(CatalogError::Validation(format!(
                "update factor must be positive, got {}",
                u.factor
            )));
        }
        let mut next = self.clone();
        match (&u.kind, &u.target) {
            (UpdateKind::ScanCostFactor, StatTarget::Relation(name)) => {
                let rel = next
                    .relations
                    .iter_mut()
                    .find(|r| &r.name == name)
                    .ok_or_else(|| CatalogError::UnknownTarget(name.clone()))?;
                rel.scan_cost_factor *= u.factor;
            }
            (UpdateKind::JoinSelectivity, StatTarget::Predicate(a, b)) => {
                let i = self
                    .predicate_between(a, b)
                    .ok_or_else(|| CatalogError::UnknownTarget(u.target.to_string()))?;
                let p = &mut next.predicates[i];
                let s = p.selectivity * u.factor;
                if s > 1.0 {
                    return Err(CatalogError::Validation(format!(
                        "selectivity of {}={} would exceed 1",
                        p.left, p.right
                    )));
                }
                p.selectivity = s;
            }
            _ => {
                return Err(CatalogError::Validation(format!(
                    "update kind does not match target `{}`",
                    u.target
                )))
            }
        }
        Ok(next)
    }

    pub fn apply_updates(&self, updates: &[StatUpdate]) -> Result<Catalog, CatalogError> {
        let mut cat = self.clone();
        for u in updates {
            cat = cat.apply_update(u)?;
        }
        Ok(cat)
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| CatalogError::Parse(format!("{}: {e}", path.as_ref().display())))?;
    Catalog::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    #[serde(rename = "scan_cost")]
    ScanCostFactor,
    #[serde(rename = "join_selectivity")]
    JoinSelectivity,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StatTarget {
    Relation(String),
    Predicate(AttrRef, AttrRef),
}

impl fmt::Display for StatTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatTarget::Relation(r) => f.write_str(r),
            StatTarget::Predicate(a, b) => write!(f, "{a}={b}"),
        }
    }
}

impl std::str::FromStr for StatTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((a, b)) => Ok(StatTarget::Predicate(a.trim().parse()?, b.trim().parse()?)),
            None if !s.trim().is_empty() && !s.contains('.') => {
                Ok(StatTarget::Relation(s.trim().to_string()))
            }
            None => Err(format!("invalid update target `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUpdate", into = "RawUpdate")]
pub struct StatUpdate {
    pub kind: UpdateKind,
    pub target: StatTarget,
    pub factor: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUpdate {
    kind: UpdateKind,
    target: String,
    factor: f64,
}

impl TryFrom<RawUpdate> for StatUpdate {
    type Error = String;

    fn try_from(r: RawUpdate) -> Result<Self, Self::Error> {
        let target: StatTarget = r.target.parse()?;
        match (r.kind, &target) {
            (UpdateKind::ScanCostFactor, StatTarget::Relation(_))
            | (UpdateKind::JoinSelectivity, StatTarget::Predicate(..)) => {}
            _ => return Err(format!("target `{}` does not fit the update kind", r.target)),
        }
        if !(r.factor.is_finite() && r.factor > 0.0) {
            return Err(format!("factor must be positive, got {}", r.factor));
        }
        Ok(StatUpdate {
            kind: r.kind,
            target,
            factor: r.factor,
        })
    }
}

impl From<StatUpdate> for RawUpdate {
    fn from(u: StatUpdate) -> Self {
        RawUpdate {
            kind: u.kind,
            target: u.target.to_string(),
            factor: u.factor,
        }
    }
}

impl StatUpdate {
    pub fn scan_cost(relation: impl Into<String>, factor: f64) -> Self {
        StatUpdate {
            kind: UpdateKind::ScanCostFactor,
            target: StatTarget::Relation(relation.into()),
            factor,
        }
    }

    pub fn join_selectivity(left: AttrRef, right: AttrRef, factor: f64) -> Self {
        StatUpdate {
            kind: UpdateKind::JoinSelectivity,
            target: StatTarget::Predicate(left, right),
            factor,
        }
    }

    pub fn inverse(&self) -> StatUpdate {
        StatUpdate {
            factor: 1.0 / self.factor,
            ..self.clone()
        }
    }
}

pub fn parse_updates(text: &str) -> Result<Vec<StatUpdate>, CatalogError> {
    serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))
}

pub fn load_updates(path: impl AsRef<Path>) -> Result<Vec<StatUpdate>, CatalogError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| CatalogError::Parse(format!("{}: {e}", path.as_ref().display())))?;
    parse_updates(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Catalog {
        Catalog::from_json(
            r#"{"relations":[
                {"name":"C","cardinality":1500,"attributes":["ck"],"indexed_on":["ck"],"sorted_on":null,"scan_cost_factor":1.0},
                {"name":"O","cardinality":15000,"attributes":["ck","ok"],"indexed_on":[],"sorted_on":"ok","scan_cost_factor":1.0},
                {"name":"L","cardinality":60000,"attributes":["ok"],"indexed_on":["ok"],"sorted_on":null,"scan_cost_factor":1.0}],
              "predicates":[
                {"left":"C.ck","right":"O.ck","selectivity":0.001},
                {"left":"O.ok","right":"L.ok","selectivity":0.0001}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let cat = sample();
        assert_eq!(cat.relations.len(), 3);
        assert_eq!(cat.predicates.len(), 2);
        let again = Catalog::from_json(&cat.to_json()).unwrap();
        assert_eq!(again, cat);
        assert_eq!(again.to_json(), cat.to_json());
    }

    #[test]
    fn rejects_bad_catalogs() {
        let empty = r#"{"relations":[],"predicates":[]}"#;
        assert!(matches!(Catalog::from_json(empty), Err(CatalogError::Validation(_))));
        let dangling = r#"{"relations":[{"name":"A","cardinality":1,"attributes":["x"]}],
            "predicates":[{"left":"A.x","right":"X.y","selectivity":0.5}]}"#;
        assert!(matches!(Catalog::from_json(dangling), Err(CatalogError::Validation(_))));
        let zero = r#"{"relations":[{"name":"A","cardinality":0,"attributes":[]}],"predicates":[]}"#;
        assert!(matches!(Catalog::from_json(zero), Err(CatalogError::Validation(_))));
        let unknown_key = r#"{"relations":[{"name":"A","cardinality":1,"attributes":[],"rows":3}],"predicates":[]}"#;
        assert!(matches!(Catalog::from_json(unknown_key), Err(CatalogError::Parse(_))));
        assert!(matches!(Catalog::from_json("{"), Err(CatalogError::Parse(_))));
    }

    #[test]
    fn predicate_lookup_is_symmetric() {
        let cat = sample();
        let o = AttrRef::new("O", "ok");
        let l = AttrRef::new("L", "ok");
        assert_eq!(cat.predicate_between(&o, &l), Some(1));
        assert_eq!(cat.predicate_between(&l, &o), Some(1));
    }

    #[test]
    fn updates_multiply_one_number() {
        let cat = sample();
        let c2 = cat.apply_update(&StatUpdate::scan_cost("L", 8.0)).unwrap();
        assert_eq!(c2.relation("L").unwrap().scan_cost_factor, 8.0);
        assert_eq!(c2.relation("O"), cat.relation("O"));
        let u = StatUpdate::join_selectivity(AttrRef::new("L", "ok"), AttrRef::new("O", "ok"), 0.125);
        let c3 = cat.apply_update(&u).unwrap();
        assert_eq!(c3.predicates[1].selectivity, 0.0001 * 0.125);
        assert_eq!(c3.predicates[0], cat.predicates[0]);
        assert_eq!(
            cat.apply_update(&StatUpdate::scan_cost("X", 2.0)),
            Err(CatalogError::UnknownTarget("X".into()))
        );
    }

    #[test]
    fn update_file_format() {
        let ups = parse_updates(
            r#"[{"kind":"scan_cost","target":"L","factor":8},
                {"kind":"join_selectivity","target":"O.ok=L.ok","factor":0.125}]"#,
        )
        .unwrap();
        assert_eq!(ups[0], StatUpdate::scan_cost("L", 8.0));
        assert_eq!(
            ups[1].target,
            StatTarget::Predicate(AttrRef::new("O", "ok"), AttrRef::new("L", "ok"))
        );
        assert!(parse_updates(r#"[{"kind":"scan_cost","target":"L","factor":-1}]"#).is_err());
        assert!(parse_updates(r#"[{"kind":"scan_cost","target":"O.ok=L.ok","factor":2}]"#).is_err());
        let text = serde_json::to_string(&ups).unwrap();
        assert_eq!(parse_updates(&text).unwrap(), ups);
    }
}
