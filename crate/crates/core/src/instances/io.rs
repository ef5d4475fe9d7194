//! JSON instance files.
//!
//! OT: `{"kind":"ot","n":N,"mu":[...],"nu":[...],"cost":[[...],...]}`
//!
//! WB: `{"kind":"wb","n":N,"m":M,"weights":[...],"marginals":[[...],...],"costs":[[[...]]]}`
//! where `costs` holds either one shared matrix or `M` matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Histogram, OtInstance, WbInstance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Ot(OtInstance),
    Wb(WbInstance),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum InstanceFile {
    Ot {
        n: usize,
        mu: Vec<f64>,
        nu: Vec<f64>,
        cost: Vec<Vec<f64>>,
    },
    Wb {
        n: usize,
        m: usize,
        weights: Vec<f64>,
        marginals: Vec<Vec<f64>>,
        costs: Vec<Vec<Vec<f64>>>,
    },
}

fn field<T>(r: Result<T>, name: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInstance(msg) => Error::InvalidInstance(format!("{name}: {msg}")),
        other => other,
    })
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        match self {
            InstanceFile::Ot { n, mu, nu, cost } => {
                let mu = field(Histogram::new(mu), "mu")?;
                let nu = field(Histogram::new(nu), "nu")?;
                let cost = field(Matrix::from_rows(&cost), "cost")?;
                if cost.rows() != n || mu.len() != n {
                    return Err(Error::invalid(format!(
                        "declared n = {n} but mu has {} entries and cost {} rows",
                        mu.len(),
                        cost.rows()
                    )));
                }
                Ok(Instance::Ot(OtInstance::new(mu, nu, cost)?))
            }
            InstanceFile::Wb {
                n,
                m,
                weights,
                marginals,
                costs,
            } => {
                if marginals.len() != m {
                    return Err(Error::invalid(format!(
                        "declared m = {m} but {} marginals given",
                        marginals.len()
                    )));
                }
                let marginals = marginals
                    .into_iter()
                    .enumerate()
                    .map(|(l, h)| field(Histogram::new(h), &format!("marginals[{l}]")))
                    .collect::<Result<Vec<_>>>()?;
                let costs = costs
                    .iter()
                    .enumerate()
                    .map(|(l, c)| field(Matrix::from_rows(c), &format!("costs[{l}]")))
                    .collect::<Result<Vec<_>>>()?;
                let inst = WbInstance::new(weights, marginals, costs)?;
                if inst.n() != n {
                    return Err(Error::invalid(format!("declared n = {n} but cost has size {}", inst.n())));
                }
                Ok(Instance::Wb(inst))
            }
        }
    }

    fn from_instance(inst: &Instance) -> Self {
        match inst {
            Instance::Ot(ot) => InstanceFile::Ot {
                n: ot.n(),
                mu: ot.mu.as_slice().to_vec(),
                nu: ot.nu.as_slice().to_vec(),
                cost: ot.cost.entries().to_rows(),
            },
            Instance::Wb(wb) => InstanceFile::Wb {
                n: wb.n(),
                m: wb.m(),
                weights: wb.weights.clone(),
                marginals: wb.marginals.iter().map(|h| h.as_slice().to_vec()).collect(),
                costs: wb.costs.iter().map(|c| c.entries().to_rows()).collect(),
            },
        }
    }
}

pub fn to_json(inst: &Instance) -> String {
    serde_json::to_string(&InstanceFile::from_instance(inst)).expect("instance serializes")
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(inst)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: InstanceFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    file.into_instance()
}

impl From<OtInstance> for Instance {
    fn from(v: OtInstance) -> Self {
        Instance::Ot(v)
    }
}

impl From<WbInstance> for Instance {
    fn from(v: WbInstance) -> Self {
        Instance::Wb(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_gaussian_wb, gen_random_instance};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("otwb-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn ot_round_trip_is_exact() {
        let inst: Instance = gen_random_instance(10, 7).unwrap().into();
        let p = tmp("ot.json");
        save_instance(&inst, &p).unwrap();
        assert_eq!(load_instance(&p).unwrap(), inst);
    }

    #[test]
    fn wb_round_trip_is_exact() {
        let inst: Instance = gen_gaussian_wb(3, 12, 1).unwrap().instance.into();
        let p = tmp("wb.json");
        save_instance(&inst, &p).unwrap();
        assert_eq!(load_instance(&p).unwrap(), inst);
    }

    #[test]
    fn negative_mass_is_rejected_with_field() {
        let p = tmp("neg.json");
        std::fs::write(&p, r#"{"kind":"ot","n":2,"mu":[1.1,-0.1],"nu":[0.5,0.5],"cost":[[0,1],[1,0]]}"#).unwrap();
        let err = load_instance(&p).unwrap_err().to_string();
        assert!(err.contains("mu") && err.contains("negative"), "{err}");
    }

    #[test]
    fn near_unit_mass_is_renormalized() {
        let p = tmp("near.json");
        std::fs::write(&p, r#"{"kind":"ot","n":2,"mu":[0.5,0.5000001],"nu":[0.5,0.5],"cost":[[0,1],[1,0]]}"#).unwrap();
        let Instance::Ot(inst) = load_instance(&p).unwrap() else { panic!() };
        assert!((inst.mu.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_json_reports_position() {
        let p = tmp("bad.json");
        std::fs::write(&p, "{\"kind\":\"ot\",\n\"n\":2,\n\"mu\":[0.5,]}").unwrap();
        let err = load_instance(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn shared_wb_cost() {
        let p = tmp("shared.json");
        std::fs::write(
            &p,
            r#"{"kind":"wb","n":2,"m":2,"weights":[0.5,0.5],"marginals":[[1,0],[0,1]],"costs":[[[0,1],[1,0]]]}"#,
        )
        .unwrap();
        let Instance::Wb(inst) = load_instance(&p).unwrap() else { panic!() };
        assert_eq!(inst.cost(1).get(0, 1), 1.0);
    }
}
