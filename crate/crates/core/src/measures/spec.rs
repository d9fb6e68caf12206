use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use super::{Family, MeasureModel, Polytope};
use crate::error::{Error, Result};
use crate::sampler::{ChainConfig, Seed};

/// Parsed measure specification `family:dim[,key=value…]`.
///
/// The dimension may be omitted (`gaussian`) when a grid supplies it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasureSpec {
    pub family: Family,
    pub dim: Option<usize>,
    pub options: BTreeMap<String, String>,
}

impl MeasureSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.trim().split(',');
        let head = parts.next().unwrap_or_default();
        let (name, dim) = match head.split_once(':') {
            Some((name, d)) => {
                let d: usize = d
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad dimension in measure spec {text:?}")))?;
                if d == 0 {
                    return Err(Error::Parse("measure dimension must be positive".into()));
                }
                (name, Some(d))
            }
            None => (head, None),
        };
        let family = Family::parse(name)?;
        let mut options = BTreeMap::new();
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Parse(format!("expected key=value in measure spec, got {kv:?}"))
            })?;
            options.insert(k.trim().to_string(), v.trim().to_string());
        }
        if family == Family::HpolyBody && !options.contains_key("file") {
            return Err(Error::Parse("hpoly measures need file=<path>".into()));
        }
        Ok(MeasureSpec {
            family,
            dim,
            options,
        })
    }

    pub fn with_dim(&self, n: usize) -> Self {
        MeasureSpec {
            dim: Some(n),
            ..self.clone()
        }
    }

    /// Builds the model; relative `file=` paths are resolved against `base_dir`.
    pub fn build(
        &self,
        base_dir: Option<&Path>,
        chain: ChainConfig,
        seed: Seed,
    ) -> Result<MeasureModel> {
        if self.family != Family::HpolyBody {
            let n = self
                .dim
                .ok_or_else(|| Error::Usage(format!("measure {self} needs a dimension")))?;
            return Ok(self.family.build(n)?.with_chain(chain));
        }
        let mut path = PathBuf::from(&self.options["file"]);
        if path.is_relative() {
            if let Some(base) = base_dir {
                path = base.join(path);
            }
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        let (dim, normals, offsets) = Polytope::parse_hpoly(&text)?;
        if let Some(n) = self.dim {
            crate::error::check_dim(n, dim)?;
        }
        let pilot: usize = self.option("pilot", 20_000)?;
        let dirs: usize = self.option("voldirs", 200_000)?;
        MeasureModel::hpoly(
            dim,
            normals,
            offsets,
            chain,
            pilot,
            dirs,
            seed.derive("hpoly-build", 0),
        )
    }

    fn option<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.options.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("bad value {v:?} for {key}"))),
        }
    }
}

impl std::str::FromStr for MeasureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureSpec::parse(s)
    }
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family.name())?;
        if let Some(n) = self.dim {
            write!(f, ":{n}")?;
        }
        for (k, v) in &self.options {
            write!(f, ",{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grammar() {
        let s = MeasureSpec::parse("gaussian:8").unwrap();
        assert_eq!((s.family, s.dim), (Family::Gaussian, Some(8)));
        let h = MeasureSpec::parse("hpoly:3,file=body.hpoly").unwrap();
        assert_eq!(h.options["file"], "body.hpoly");
        assert_eq!(h.to_string(), "hpoly:3,file=body.hpoly");
        assert_eq!(MeasureSpec::parse("exp").unwrap().dim, None);
        assert!(MeasureSpec::parse("torus:3").is_err());
        assert!(MeasureSpec::parse("cube:0").is_err());
        assert!(MeasureSpec::parse("hpoly:3").is_err());
    }
}
