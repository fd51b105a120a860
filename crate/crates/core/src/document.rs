//! JSON network documents.
//!
//! ```json
//! { "fs_hz": 1e5, "load": {"r_ohm": 5, "v_min": 50, "v_max": 54},
//!   "branches": [ {"name": "pv1", "source": {"constant_v": 40}, "rs": 0.5,
//!                  "r_cable": 0.2, "rl": 0.04, "rm": 0.019, "rd": 0.014,
//!                  "vd": 0.6, "alpha": 0.0026, "lambda": 1, "mu": 1} ] }
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lossmodel;
use crate::netmodel::{validate_network, Branch, NetworkSpec, Piece, PwlCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub fs_hz: f64,
    pub load: LoadDoc,
    /// Enforce `V' >= 20·VD` on every branch.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vin_floor: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub branches: Vec<BranchDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadDoc {
    pub r_ohm: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceDoc {
    Pieces { pieces: Vec<Piece> },
    Constant { constant_v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaDoc {
    Value(f64),
    Transitions { tau_on_s: f64, tau_off_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDoc {
    pub name: String,
    pub source: SourceDoc,
    pub rs: f64,
    pub r_cable: f64,
    pub rl: f64,
    pub rm: f64,
    pub rd: f64,
    pub vd: f64,
    pub alpha: AlphaDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_max: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyPolicy {
    /// Unknown keys are an error.
    #[default]
    Strict,
    /// Unknown keys are reported and ignored.
    Lenient,
}

const TOP_KEYS: &[&str] = &["fs_hz", "load", "vin_floor", "note", "branches"];
const LOAD_KEYS: &[&str] = &["r_ohm", "v_min", "v_max"];
const BRANCH_KEYS: &[&str] = &[
    "name", "source", "rs", "r_cable", "rl", "rm", "rd", "vd", "alpha", "l_h", "is_min", "i_min",
    "g_max", "lambda", "mu", "note",
];
const SOURCE_KEYS: &[&str] = &["pieces", "constant_v"];
const PIECE_KEYS: &[&str] = &["beta", "gamma"];
const ALPHA_KEYS: &[&str] = &["tau_on_s", "tau_off_s"];

fn unknown_in(v: &Value, allowed: &[&str], path: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for k in map.keys().filter(|k| !allowed.contains(&k.as_str())) {
            out.push(format!("{path}.{k}"));
        }
    }
}

/// Paths of keys the schema does not know, e.g. `branches[1].colour`.
pub fn unknown_keys(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    unknown_in(v, TOP_KEYS, "$", &mut out);
    if let Some(l) = v.get("load") {
        unknown_in(l, LOAD_KEYS, "$.load", &mut out);
    }
    if let Some(Value::Array(bs)) = v.get("branches") {
        for (i, b) in bs.iter().enumerate() {
            let p = format!("$.branches[{i}]");
            unknown_in(b, BRANCH_KEYS, &p, &mut out);
            if let Some(s) = b.get("source") {
                unknown_in(s, SOURCE_KEYS, &format!("{p}.source"), &mut out);
                if let Some(Value::Array(ps)) = s.get("pieces") {
                    for (j, piece) in ps.iter().enumerate() {
                        unknown_in(
                            piece,
                            PIECE_KEYS,
                            &format!("{p}.source.pieces[{j}]"),
                            &mut out,
                        );
                    }
                }
            }
            if let Some(a @ Value::Object(_)) = b.get("alpha") {
                unknown_in(a, ALPHA_KEYS, &format!("{p}.alpha"), &mut out);
            }
        }
    }
    out
}

/// Parses a document. Returns it with the list of ignored keys (always
/// empty under [`KeyPolicy::Strict`]).
pub fn parse_document(text: &str, policy: KeyPolicy) -> Result<(NetworkDocument, Vec<String>)> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("JSON: {e}")))?;
    let unknown = unknown_keys(&value);
    if policy == KeyPolicy::Strict && !unknown.is_empty() {
        return Err(Error::InvalidInput(format!(
            "unknown keys: {}",
            unknown.join(", ")
        )));
    }
    let doc =
        serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("document: {e}")))?;
    Ok((doc, unknown))
}

impl NetworkDocument {
    /// Converts to a validated network.
    pub fn to_network(&self) -> Result<NetworkSpec> {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                name: b.name.clone(),
                curve: match &b.source {
                    SourceDoc::Pieces { pieces } => PwlCurve::new(pieces.clone()),
                    SourceDoc::Constant { constant_v } => PwlCurve::constant(*constant_v),
                },
                rs: b.rs,
                r_cable: b.r_cable,
                r_inductor: b.rl,
                r_mosfet: b.rm,
                r_diode: b.rd,
                v_diode: b.vd,
                alpha: match b.alpha {
                    AlphaDoc::Value(a) => a,
                    AlphaDoc::Transitions {
                        tau_on_s,
                        tau_off_s,
                    } => lossmodel::switching_alpha(tau_on_s, tau_off_s, self.fs_hz),
                },
                inductance: b.l_h,
                is_min: b.is_min,
                i_min: b.i_min,
                g_max: b.g_max,
                lambda: b.lambda,
                mu: b.mu,
            })
            .collect();
        let net = NetworkSpec {
            branches,
            r_load: self.load.r_ohm,
            v_load_min: self.load.v_min,
            v_load_max: self.load.v_max,
            f_s: self.fs_hz,
        };
        validate_network(&net)?;
        Ok(net)
    }
}

/// Parses and converts in one step.
pub fn load_network(
    text: &str,
    policy: KeyPolicy,
) -> Result<(NetworkDocument, NetworkSpec, Vec<String>)> {
    let (doc, unknown) = parse_document(text, policy)?;
    let net = doc.to_network()?;
    Ok((doc, net, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "fs_hz": 100000,
        "load": {"r_ohm": 5, "v_min": 50, "v_max": 54},
        "branches": [{
            "name": "a", "source": {"pieces": [{"beta": -0.5, "gamma": 42}, {"beta": -1, "gamma": 45}]},
            "rs": 0.5, "r_cable": 0.2, "rl": 0.04, "rm": 0.019, "rd": 0.014, "vd": 0.6,
            "alpha": {"tau_on_s": 2.6e-8, "tau_off_s": 2.6e-8}, "lambda": 1, "mu": 1
        }]
    }"#;

    #[test]
    fn parses_minimal() {
        let (doc, net, unknown) = load_network(MINIMAL, KeyPolicy::Strict).unwrap();
        assert!(unknown.is_empty());
        assert!(!doc.vin_floor);
        assert_eq!(net.branches[0].curve.len(), 2);
        assert!((net.branches[0].alpha - 0.0026).abs() < 1e-15);
        assert_eq!(net.demand(50.0), 10.0);
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = MINIMAL.replace("\"mu\": 1", "\"mu\": 1, \"colour\": \"red\"");
        assert!(matches!(
            parse_document(&text, KeyPolicy::Strict),
            Err(Error::InvalidInput(m)) if m.contains("$.branches[0].colour")
        ));
        let (_, unknown) = parse_document(&text, KeyPolicy::Lenient).unwrap();
        assert_eq!(unknown, vec!["$.branches[0].colour".to_string()]);
    }

    #[test]
    fn validation_errors_surface() {
        let text = MINIMAL.replace("\"v_min\": 50", "\"v_min\": 40");
        match load_network(&text, KeyPolicy::Strict) {
            Err(Error::Invalid(v)) => assert_eq!(v[0].rule.id(), "OpenCircuitAboveVloadMin"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            parse_document("{", KeyPolicy::Strict),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            parse_document(r#"{"fs_hz": 1}"#, KeyPolicy::Strict),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn round_trip() {
        let (doc, _) = parse_document(MINIMAL, KeyPolicy::Strict).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(parse_document(&text, KeyPolicy::Strict).unwrap().0, doc);
    }
}
