//! Model files: a versioned JSON envelope around [`PosteriorSamples`].
//!
//! ```text
//! {"format":"ridgebart-posterior","version":1,"meta":{...},"config":{...},
//!  "outcome":"gaussian","x_kinds":[...],"transform":{...}|null,"draws":[...]}
//! ```
//!
//! Floats are written with shortest round-trip formatting and parsed exactly,
//! so a load/save cycle reproduces the bytes.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, FormatError};
use crate::model::PosteriorSamples;

pub const FORMAT_NAME: &str = "ridgebart-posterior";
pub const FORMAT_VERSION: u64 = 1;

pub fn serialize(samples: &PosteriorSamples) -> Vec<u8> {
    let body = serde_json::to_value(samples).expect("samples serialize");
    let Value::Object(fields) = body else { unreachable!("struct serializes to an object") };
    let mut out = Map::new();
    out.insert("format".into(), FORMAT_NAME.into());
    out.insert("version".into(), FORMAT_VERSION.into());
    out.extend(fields);
    let mut bytes = serde_json::to_vec(&Value::Object(out)).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

pub fn deserialize(bytes: &[u8]) -> Result<PosteriorSamples, FormatError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| match e.classify() {
        serde_json::error::Category::Eof => FormatError::Truncated,
        _ => FormatError::Malformed(e.to_string()),
    })?;
    let Value::Object(mut fields) = value else {
        return Err(FormatError::Malformed("top level is not an object".into()));
    };
    match fields.remove("format") {
        Some(Value::String(s)) if s == FORMAT_NAME => {}
        _ => return Err(FormatError::Malformed(format!("missing `format: {FORMAT_NAME}` tag"))),
    }
    let version = fields
        .remove("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FormatError::Malformed("missing version".into()))?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let samples: PosteriorSamples =
        serde_json::from_value(Value::Object(fields)).map_err(|e| FormatError::Malformed(e.to_string()))?;
    samples.validate().map_err(FormatError::InvariantViolation)?;
    Ok(samples)
}

pub fn save(path: &Path, samples: &PosteriorSamples) -> Result<(), Error> {
    std::fs::write(path, serialize(samples))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PosteriorSamples, Error> {
    let bytes = std::fs::read(path)?;
    Ok(deserialize(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Branching, PriorConfig};
    use crate::data::{ColumnKind, Outcome};
    use crate::model::{ChainMeta, Ensemble, LeafParams};
    use crate::ridge::Activation;
    use crate::tree::RidgeTree;

    fn samples(draws: usize) -> PosteriorSamples {
        let config = PriorConfig {
            trees: 1,
            ridge: 1,
            activation: Activation::Cosine,
            tau: 0.1,
            nu: 3.0,
            lambda: 0.788,
            nu_sigma: 3.0,
            lambda_sigma: 0.3,
            branching: Branching::default(),
            rotate_omega: false,
            omega_base_cov: vec![1.0],
        };
        let leaf = LeafParams {
            rho: 1.0 / 3.0,
            omega: vec![0.1 + 0.2],
            offsets: vec![std::f64::consts::PI],
            beta: vec![0.25],
        };
        PosteriorSamples {
            meta: ChainMeta {
                seed: 17,
                chains: 1,
                iterations: draws,
                burn_in: 0,
                thin: 1,
                config_hash: config.hash(),
            },
            config,
            outcome: Outcome::Gaussian,
            x_kinds: vec![ColumnKind::Continuous],
            transform: None,
            draws: (0..draws)
                .map(|_| Ensemble {
                    trees: vec![RidgeTree::single_leaf(leaf.clone())],
                    sigma2: 1e-300,
                    y_center: -2.5e-17,
                    activation: Activation::Cosine,
                })
                .collect(),
        }
    }

    #[test]
    fn round_trips_exactly() {
        for n in [0, 1] {
            let s = samples(n);
            let bytes = serialize(&s);
            let back = deserialize(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(serialize(&back), bytes);
        }
    }

    #[test]
    fn distinct_failure_modes() {
        let bytes = serialize(&samples(1));
        assert!(matches!(deserialize(&bytes[..bytes.len() / 2]), Err(FormatError::Truncated)));
        assert!(matches!(deserialize(b""), Err(FormatError::Truncated)));

        let text = String::from_utf8(bytes.clone()).unwrap();
        let v2 = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            deserialize(v2.as_bytes()),
            Err(FormatError::VersionMismatch { found: 2, expected: 1 })
        ));

        let bad_count = text.replacen("\"iterations\":1", "\"iterations\":3", 1);
        assert!(matches!(deserialize(bad_count.as_bytes()), Err(FormatError::InvariantViolation(_))));

        let bad_sigma = text.replacen("\"sigma2\":1e-300", "\"sigma2\":-1.0", 1);
        assert!(matches!(deserialize(bad_sigma.as_bytes()), Err(FormatError::InvariantViolation(_))));

        assert!(matches!(deserialize(b"[1,2]"), Err(FormatError::Malformed(_))));
        assert!(matches!(deserialize(b"{\"version\":1}"), Err(FormatError::Malformed(_))));
    }
}
