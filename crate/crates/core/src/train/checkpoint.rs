use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::binio::{expect_magic, put_any, put_string, put_tensor, put_u32, read_tensor, AnyTensor, Reader};
use crate::error::{Error, Result};
use crate::net::{parse_kv_lines, FlavrConfig, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::{AdamState, Moments};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FLVR";
pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

/// Network parameters plus the configuration and training state that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: FlavrConfig,
    pub params: Vec<(String, AnyTensor)>,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub best_val_psnr: f64,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        Checkpoint {
            config: net.config().clone(),
            params: net
                .parameters()
                .iter()
                .map(|p| (p.name().to_string(), AnyTensor::from_tensor(p.value())))
                .collect(),
            adam: None,
            epoch: 0,
            best_val_psnr: f64::NAN,
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Errors with the offending names if this checkpoint's parameter
    /// table differs from what `config` builds.
    pub fn check_names(&self, config: &FlavrConfig) -> Result<()> {
        let expected: BTreeSet<String> = Network::<f32>::build(config, 0)?
            .parameters()
            .iter()
            .map(|p| p.name().to_string())
            .collect();
        let found: BTreeSet<String> = self.params.iter().map(|(n, _)| n.clone()).collect();
        if expected != found {
            return Err(Error::NameMismatch {
                missing: expected.difference(&found).cloned().collect(),
                unexpected: found.difference(&expected).cloned().collect(),
            });
        }
        Ok(())
    }

    /// Copies every stored parameter into `net`.
    pub fn restore<T: Scalar>(&self, net: &mut Network<T>) -> Result<()> {
        self.check_names(net.config())?;
        for (name, value) in &self.params {
            let p = net.parameter_mut(name).expect("names checked");
            p.pair_mut()
                .set_value(value.to_tensor())
                .map_err(|e| e.context(format!("restoring {name}")))?;
        }
        Ok(())
    }

    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut net = Network::build(&self.config, 0)?;
        self.restore(&mut net)?;
        Ok(net)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut blob = self.config.to_kv();
        blob.push_str(&format!("epoch={}\n", self.epoch));
        blob.push_str(&format!("best_val_psnr={:?}\n", self.best_val_psnr));
        if let Some(a) = &self.adam {
            blob.push_str(&format!("adam_step={}\n", a.step));
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_string(&mut out, &blob);
        let moments = self.adam.as_ref().map_or(0, |a| a.moments.len());
        put_u32(&mut out, (self.params.len() + 2 * moments) as u32);
        for (name, t) in &self.params {
            put_string(&mut out, name);
            put_any(&mut out, t);
        }
        if let Some(a) = &self.adam {
            for mo in &a.moments {
                put_string(&mut out, &format!("{M_PREFIX}{}", mo.name));
                put_tensor(&mut out, &mo.m);
                put_string(&mut out, &format!("{V_PREFIX}{}", mo.name));
                put_tensor(&mut out, &mo.v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        expect_magic(&mut r, CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let blob = r.string("config")?;
        let mut config = FlavrConfig::default();
        let mut epoch = 0;
        let mut best_val_psnr = f64::NAN;
        let mut adam_step = None;
        for (key, value) in parse_kv_lines(&blob)? {
            match key.as_str() {
                "epoch" => epoch = parse(&key, &value)?,
                "best_val_psnr" => best_val_psnr = parse(&key, &value)?,
                "adam_step" => adam_step = Some(parse(&key, &value)?),
                _ => config.set(&key, &value)?,
            }
        }
        config.validate()?;

        let count = r.u32("tensor count")? as usize;
        let mut params = Vec::new();
        let mut moments: Vec<Moments> = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let tensor = read_tensor(&mut r)?;
            if let Some(base) = name.strip_prefix(M_PREFIX) {
                moments.push(Moments {
                    name: base.to_string(),
                    m: tensor.to_tensor(),
                    v: Tensor::zeros(tensor.shape()),
                });
            } else if let Some(base) = name.strip_prefix(V_PREFIX) {
                let slot = moments
                    .last_mut()
                    .filter(|m| m.name == base)
                    .ok_or_else(|| Error::Malformed(format!("{name} does not follow its first moment")))?;
                slot.v = tensor.to_tensor();
            } else {
                params.push((name, tensor));
            }
        }
        if !r.is_empty() {
            return Err(Error::Malformed("trailing bytes after the last tensor".into()));
        }
        let adam = match (adam_step, moments.is_empty()) {
            (Some(step), _) => Some(AdamState { step, moments }),
            (None, true) => None,
            (None, false) => return Err(Error::Malformed("optimizer moments without adam_step".into())),
        };
        Ok(Checkpoint {
            config,
            params,
            adam,
            epoch,
            best_val_psnr,
        })
    }
}

fn parse<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::Malformed(format!("checkpoint field {key}: cannot parse `{value}`")))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Loads and checks the parameter table against `config`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &FlavrConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.check_names(config)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let net = Network::<f32>::build(&FlavrConfig::tiny(), 1).unwrap();
        let bytes = Checkpoint::from_network(&net).encode();
        assert_eq!(&bytes[..4], b"FLVR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn distinct_errors() {
        let net = Network::<f32>::build(&FlavrConfig::tiny(), 1).unwrap();
        let bytes = Checkpoint::from_network(&net).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Version { found: 2, .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    }
}
