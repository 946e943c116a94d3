use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned JSON container of named tensors with a caller-defined header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorArchive<D> {
    pub format_version: u32,
    pub descriptor: D,
    pub tensors: Vec<NamedTensor>,
}

impl<D: Serialize + for<'de> Deserialize<'de>> TensorArchive<D> {
    pub fn new(descriptor: D, params: &ParamSet) -> Self {
        TensorArchive {
            format_version: FORMAT_VERSION,
            descriptor,
            tensors: archive_params(params),
        }
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.format_version != FORMAT_VERSION {
            return Err(NnError::UnsupportedVersion {
                found: v.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }
}

pub fn archive_params(params: &ParamSet) -> Vec<NamedTensor> {
    params
        .iter()
        .map(|(name, value, _)| NamedTensor {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            values: value.data().to_vec(),
        })
        .collect()
}

/// Loads every parameter of `params` from `tensors`. Extra tensors are an
/// error, as are missing ones.
pub fn restore_params(params: &mut ParamSet, tensors: &[NamedTensor]) -> Result<(), NnError> {
    for t in tensors {
        params.load(&t.name, Tensor::from_vec(&t.shape, t.values.clone())?)?;
    }
    let have: std::collections::HashSet<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    if let Some((name, _, _)) = params.iter().find(|(n, _, _)| !have.contains(n)) {
        return Err(NnError::MissingParam(name.to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::SeededRng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = SeededRng::new(11);
        let mut ps = ParamSet::new();
        ps.xavier("w", 5, 3, &mut rng);
        ps.filled("b", &[1, 3], 0.1);
        let json = TensorArchive::new("toy".to_string(), &ps).to_json().unwrap();
        let back: TensorArchive<String> = TensorArchive::from_json(&json).unwrap();
        let mut fresh = ParamSet::new();
        fresh.zeros("w", &[5, 3]);
        fresh.zeros("b", &[1, 3]);
        restore_params(&mut fresh, &back.tensors).unwrap();
        assert_eq!(fresh, ps);
    }

    #[test]
    fn version_and_names_are_checked() {
        let bad = r#"{"format_version":9,"descriptor":null,"tensors":[]}"#;
        assert!(matches!(
            TensorArchive::<()>::from_json(bad),
            Err(NnError::UnsupportedVersion { found: 9, .. })
        ));
        let mut ps = ParamSet::new();
        ps.zeros("w", &[1, 1]);
        assert!(matches!(
            restore_params(&mut ps, &[]),
            Err(NnError::MissingParam(_))
        ));
        let stray = NamedTensor {
            name: "x".into(),
            shape: vec![1],
            values: vec![0.0],
        };
        assert!(restore_params(&mut ps, &[stray]).is_err());
    }
}
