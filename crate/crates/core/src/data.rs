//! Datasets: synthetic generation and CSV ingestion.
//!
//! CSV columns follow the skeleton's input nodes in order: Binary `+-1`,
//! Circle phase in radians, Categorical integer in `1..=n`, Gaussian and
//! sphere inputs `d` columns each. A trailing column headed `label` holds
//! targets.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};

use crate::base_spaces::{uniform_sphere, BaseSpace, BaseValue};
use crate::embedding::InputRecord;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::skeleton::Skeleton;

/// Sphere rows further than this from unit norm are renormalized with a warning.
pub const SPHERE_WARN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Independent coordinates.
    Iid,
    /// Each coordinate repeats its left neighbour with probability `locality`
    /// when both inputs share a base space.
    Local,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(SynthKind::Iid),
            "local" => Ok(SynthKind::Local),
            _ => Err(Error::Parameter(format!(
                "unknown synthetic kind {s:?} (expected iid or local)"
            ))),
        }
    }
}

/// Draws one coordinate. Gaussian inputs use `N(0, I/d)` so typical squared
/// distances are O(1).
pub fn sample_value(space: &BaseSpace, rng: &mut RandomStream) -> BaseValue {
    match *space {
        BaseSpace::Binary => BaseValue::Binary(if rng.coin() { 1 } else { -1 }),
        BaseSpace::Circle => BaseValue::circle_from_phase(2.0 * PI * rng.uniform()),
        BaseSpace::Categorical { n } => BaseValue::Categorical(rng.below(n as usize) as u32 + 1),
        BaseSpace::Gaussian { d, .. } => {
            let s = 1.0 / (d as f64).sqrt();
            BaseValue::Vector(
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        s * z
                    })
                    .collect(),
            )
        }
        BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d } => BaseValue::Vector(uniform_sphere(d, rng)),
    }
}

/// `n` synthetic records; record `i` uses stream `(seed, i)`.
pub fn synthesize(
    skeleton: &Skeleton,
    n: usize,
    kind: SynthKind,
    locality: f64,
    seed: u64,
) -> Result<Vec<InputRecord>> {
    if !(0.0..=1.0).contains(&locality) {
        return Err(Error::Parameter(format!("locality {locality} not in [0, 1]")));
    }
    let spaces: Vec<&BaseSpace> = skeleton.input_spaces().collect();
    Ok((0..n)
        .map(|i| {
            let mut rng = RandomStream::for_index(seed, i as u64);
            let mut coords: Vec<BaseValue> = Vec::with_capacity(spaces.len());
            for (j, space) in spaces.iter().enumerate() {
                let copy = kind == SynthKind::Local && j > 0 && spaces[j - 1] == *space && rng.uniform() < locality;
                let v = if copy {
                    coords[j - 1].clone()
                } else {
                    sample_value(space, &mut rng)
                };
                coords.push(v);
            }
            InputRecord::new(coords)
        })
        .collect())
}

/// Loaded rows, optional labels, and any normalization warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<InputRecord>,
    pub labels: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn parse_num(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}: cannot parse {field:?} as a number")))
}

/// Reads a dataset whose columns match `skeleton`'s input nodes.
pub fn read_csv<R: Read>(input: R, skeleton: &Skeleton) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let spaces: Vec<&BaseSpace> = skeleton.input_spaces().collect();
    let width: usize = spaces.iter().map(|s| s.width()).sum();
    let has_label = match headers.len() {
        w if w == width => false,
        w if w == width + 1 && headers.get(width).map(str::trim) == Some("label") => true,
        w => {
            return Err(Error::Domain(format!(
                "dataset has {w} columns, skeleton inputs need {width} (plus optional label)"
            )))
        }
    };
    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut warnings = Vec::new();
    for (r, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = r + 1;
        if row.len() != headers.len() {
            return Err(Error::Domain(format!(
                "row {row_no} has {} fields, expected {}",
                row.len(),
                headers.len()
            )));
        }
        let mut col = 0;
        let mut coords = Vec::with_capacity(spaces.len());
        for (node, space) in spaces.iter().enumerate() {
            let value = match **space {
                BaseSpace::Binary => {
                    let v = parse_num(&row[col], row_no)?;
                    if v != 1.0 && v != -1.0 {
                        return Err(Error::Domain(format!(
                            "row {row_no}, input {}: binary value {v} is not +-1",
                            node + 1
                        )));
                    }
                    BaseValue::Binary(v as i8)
                }
                BaseSpace::Circle => BaseValue::circle_from_phase(parse_num(&row[col], row_no)?),
                BaseSpace::Categorical { .. } => {
                    let v = parse_num(&row[col], row_no)?;
                    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                        return Err(Error::Domain(format!(
                            "row {row_no}, input {}: category {v} is not a positive integer",
                            node + 1
                        )));
                    }
                    BaseValue::Categorical(v as u32)
                }
                BaseSpace::Gaussian { d, .. } => BaseValue::Vector(
                    (col..col + d)
                        .map(|c| parse_num(&row[c], row_no))
                        .collect::<Result<_>>()?,
                ),
                BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d } => {
                    let v: Vec<f64> = (col..col + d)
                        .map(|c| parse_num(&row[c], row_no))
                        .collect::<Result<_>>()?;
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 || !norm.is_finite() {
                        return Err(Error::Domain(format!(
                            "row {row_no}, input {}: sphere vector has norm {norm}",
                            node + 1
                        )));
                    }
                    if (norm - 1.0).abs() > SPHERE_WARN_TOL {
                        warnings.push(format!(
                            "row {row_no}, input {}: renormalized sphere vector of norm {norm}",
                            node + 1
                        ));
                    }
                    BaseValue::Vector(v.into_iter().map(|x| x / norm).collect())
                }
            };
            space.check_value(&value)?;
            coords.push(value);
            col += space.width();
        }
        if has_label {
            labels.push(parse_num(&row[width], row_no)?);
        }
        records.push(InputRecord::new(coords));
    }
    Ok(Dataset {
        records,
        labels: has_label.then_some(labels),
        warnings,
    })
}

/// Writes records (and optional labels) in the format [`read_csv`] accepts.
pub fn write_csv<W: Write>(out: W, skeleton: &Skeleton, records: &[InputRecord], labels: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::new();
    for (i, space) in skeleton.input_spaces().enumerate() {
        match space.width() {
            1 => header.push(format!("x{}", i + 1)),
            d => header.extend((1..=d).map(|k| format!("x{}_{k}", i + 1))),
        }
    }
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (r, rec) in records.iter().enumerate() {
        let mut fields = Vec::with_capacity(header.len());
        for v in &rec.coords {
            match v {
                BaseValue::Binary(b) => fields.push(b.to_string()),
                BaseValue::Circle(z) => fields.push(z.arg().to_string()),
                BaseValue::Categorical(c) => fields.push(c.to_string()),
                BaseValue::Vector(xs) => fields.extend(xs.iter().map(|x| x.to_string())),
            }
        }
        if let Some(l) = labels {
            fields.push(l[r].to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::ActivationSpec;

    fn mixed() -> Skeleton {
        Skeleton::flat(
            vec![
                BaseSpace::Binary,
                BaseSpace::Circle,
                BaseSpace::Categorical { n: 4 },
                BaseSpace::Gaussian { d: 2, a: 1.0 },
                BaseSpace::SpherePair { d: 3 },
            ],
            ActivationSpec::Exp { c: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn synthetic_rows_are_in_domain_and_reproducible() {
        let s = mixed();
        let a = synthesize(&s, 50, SynthKind::Iid, 0.0, 1).unwrap();
        let b = synthesize(&s, 50, SynthKind::Iid, 0.0, 1).unwrap();
        assert_eq!(a, b);
        for r in &a {
            r.check(&s).unwrap();
        }
        assert!(synthesize(&s, 1, SynthKind::Local, 1.5, 1).is_err());
    }

    #[test]
    fn locality_copies_neighbours() {
        let s = Skeleton::flat(vec![BaseSpace::Circle; 8], ActivationSpec::Exp { c: 1.0 }).unwrap();
        let rows = synthesize(&s, 200, SynthKind::Local, 1.0, 3).unwrap();
        for r in rows {
            assert!(r.coords.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = mixed();
        let rows = synthesize(&s, 20, SynthKind::Iid, 0.0, 9).unwrap();
        let labels: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &s, &rows, Some(&labels)).unwrap();
        let ds = read_csv(buf.as_slice(), &s).unwrap();
        assert_eq!(ds.labels.as_deref(), Some(labels.as_slice()));
        assert!(ds.warnings.is_empty());
        for (a, b) in ds.records.iter().zip(&rows) {
            for (u, v) in a.coords.iter().zip(&b.coords) {
                match (u, v) {
                    (BaseValue::Circle(p), BaseValue::Circle(q)) => assert!((p - q).norm() < 1e-15),
                    (BaseValue::Vector(p), BaseValue::Vector(q)) => {
                        assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-15))
                    }
                    _ => assert_eq!(u, v),
                }
            }
        }
    }

    #[test]
    fn sphere_rows_are_renormalized_with_warning() {
        let s = Skeleton::single_input(BaseSpace::SpherePair { d: 3 }).unwrap();
        let ds = read_csv("a,b,c\n2,0,0\n0.6,0.8,0\n".as_bytes(), &s).unwrap();
        assert_eq!(ds.warnings.len(), 1);
        assert_eq!(ds.records[0].coords[0], BaseValue::Vector(vec![1.0, 0.0, 0.0]));
        assert!(ds.labels.is_none());
    }

    #[test]
    fn bad_rows_are_rejected() {
        let s = Skeleton::single_input(BaseSpace::Binary).unwrap();
        assert!(matches!(read_csv("x\n3\n".as_bytes(), &s), Err(Error::Domain(_))));
        assert!(matches!(read_csv("x\nfoo\n".as_bytes(), &s), Err(Error::Parse(_))));
        assert!(matches!(
            read_csv("x,y,z\n1,1,1\n".as_bytes(), &s),
            Err(Error::Domain(_))
        ));
        let c = Skeleton::single_input(BaseSpace::Categorical { n: 3 }).unwrap();
        assert!(matches!(read_csv("x\n4\n".as_bytes(), &c), Err(Error::Domain(_))));
    }
}
