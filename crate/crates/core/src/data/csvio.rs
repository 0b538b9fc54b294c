use std::fs::File;
use std::path::Path;

use super::{LabeledDataset, OutlierPool, PoolSource, Split};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Result of reading a feature CSV: labeled when a `label` column exists.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Labeled(LabeledDataset),
    Pool(OutlierPool),
}

impl Loaded {
    pub fn into_labeled(self) -> Result<LabeledDataset> {
        match self {
            Loaded::Labeled(d) => Ok(d),
            Loaded::Pool(_) => Err(Error::invalid("expected a labeled dataset (no label column)")),
        }
    }

    pub fn into_pool(self) -> Result<OutlierPool> {
        match self {
            Loaded::Pool(p) => Ok(p),
            Loaded::Labeled(_) => Err(Error::invalid("expected an unlabeled pool (found label column)")),
        }
    }
}

fn header(dim: usize, labeled: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    if labeled {
        h.push("label".into());
    }
    h
}

fn write_rows(path: &Path, features: &Tensor, labels: Option<&[usize]>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let dim = features.cols();
    w.write_record(header(dim, labels.is_some())).map_err(csv_err)?;
    let rows = if features.is_empty() { 0 } else { features.rows() };
    for i in 0..rows {
        // `{:?}` prints the shortest representation that parses back exactly.
        let mut rec: Vec<String> = features.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = labels {
            rec.push((l[i] + 1).to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `f0..f{D-1},label` with 1-based labels.
pub fn save_dataset_csv(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    write_rows(path.as_ref(), data.features(), Some(data.labels()))
}

pub fn save_pool_csv(path: impl AsRef<Path>, pool: &OutlierPool) -> Result<()> {
    write_rows(path.as_ref(), pool.features(), None)
}

/// Reads a feature CSV. Labels are 1-based in the file and validated against
/// `classes` when given; line numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>, split: Split) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let head = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let labeled = head.iter().next_back() == Some("label");
    let dim = head.len() - usize::from(labeled);
    for (j, name) in head.iter().take(dim).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(parse_err(1, format!("expected column 'f{j}', found '{name}'")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut max_label = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != head.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", head.len(), rec.len())));
        }
        for field in rec.iter().take(dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value '{field}'")));
            }
            values.push(v);
        }
        if labeled {
            let raw = &rec[dim];
            let l: usize = raw
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid label '{raw}'")))?;
            if l == 0 || classes.is_some_and(|c| l > c) {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: classes.unwrap_or(0),
                });
            }
            max_label = max_label.max(l);
            labels.push(l - 1);
        }
    }

    let rows = values.len().checked_div(dim).unwrap_or(0);
    let features = Tensor::new(vec![rows, dim], values)?;
    if labeled {
        let classes = classes.unwrap_or(max_label);
        Ok(Loaded::Labeled(LabeledDataset::new(features, labels, classes, split)?))
    } else {
        let source = PoolSource {
            generator: format!("csv:{}", path.display()),
            seed: None,
        };
        Ok(Loaded::Pool(OutlierPool::new(features, source)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn dataset_round_trip() {
        let features = Tensor::matrix(3, 2, vec![0.1, -2.5, 1e-17, 3.0, 7.25, 0.3333333333333333]).unwrap();
        let d = LabeledDataset::new(features, vec![0, 2, 1], 3, Split::Test).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset_csv(f.path(), &d).unwrap();
        let back = load_csv(f.path(), Some(3), Split::Test).unwrap().into_labeled().unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn pool_round_trip() {
        let pool = OutlierPool::new(
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.0]).unwrap(),
            PoolSource {
                generator: "x".into(),
                seed: None,
            },
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        save_pool_csv(f.path(), &pool).unwrap();
        let back = load_csv(f.path(), None, Split::Test).unwrap().into_pool().unwrap();
        assert_eq!(back.features(), pool.features());
    }

    #[test]
    fn header_only_is_empty() {
        let f = tmp_with("f0,f1,label\n");
        let d = load_csv(f.path(), Some(4), Split::Train).unwrap().into_labeled().unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn malformed_row_cites_line() {
        let mut s = String::from("f0,f1\n");
        for i in 0..5 {
            s.push_str(&format!("{i}.0,1.0\n"));
        }
        s.push_str("oops,1.0\n"); // file line 7
        let f = tmp_with(&s);
        match load_csv(f.path(), None, Split::Test) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range() {
        let f = tmp_with("f0,f1,label\n0.0,1.0,4\n");
        assert!(matches!(
            load_csv(f.path(), Some(3), Split::Test),
            Err(Error::LabelOutOfRange { label: 4, classes: 3 })
        ));
        let g = tmp_with("f0,f1,label\n0.0,1.0,0\n");
        assert!(load_csv(g.path(), Some(3), Split::Test).is_err());
    }
}
