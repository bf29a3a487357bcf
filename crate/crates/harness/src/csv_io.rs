//! CSV input and output of observed samples.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use shapley_core::{ColumnKind, DataSample};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0} has no data rows")]
    Empty(PathBuf),

    #[error("column {0:?} not found in the header")]
    MissingColumn(String),

    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },

    #[error("no input columns besides the output")]
    NoInputs,

    #[error(transparent)]
    Sample(#[from] shapley_core::Error),
}

/// Which columns play which role.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub output: Option<String>,
    pub categorical: Vec<String>,
    /// Scale continuous columns by their standard deviation for distances.
    pub standardize: bool,
}

impl Schema {
    pub fn new() -> Self {
        Schema {
            standardize: true,
            ..Default::default()
        }
    }

    pub fn with_output(mut self, name: impl Into<String>) -> Self {
        self.output = Some(name.into());
        self
    }

    pub fn with_categorical<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.categorical = names.into_iter().map(Into::into).collect();
        self
    }
}

/// Reads a headed CSV file. Every column other than the output is an input;
/// categorical columns are coded by order of first appearance.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<DataSample, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CsvError::MissingColumn(name.to_string()))
    };
    let output = schema.output.as_deref().map(find).transpose()?;
    for name in &schema.categorical {
        if output == Some(find(name)?) {
            return Err(CsvError::Sample(shapley_core::Error::InvalidArgument(format!(
                "output column {name:?} cannot be categorical"
            ))));
        }
    }
    let inputs: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != output).collect();
    if inputs.is_empty() {
        return Err(CsvError::NoInputs);
    }
    let kinds: Vec<ColumnKind> = inputs
        .iter()
        .map(|&c| {
            if schema.categorical.contains(&header[c]) {
                ColumnKind::Categorical
            } else {
                ColumnKind::Continuous
            }
        })
        .collect();

    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); inputs.len()];
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); inputs.len()];
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CsvError::Ragged {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let number = |c: usize| {
            let raw = record[c].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CsvError::Parse {
                    line,
                    column: header[c].clone(),
                    value: raw.to_string(),
                })
        };
        for (k, &c) in inputs.iter().enumerate() {
            let value = match kinds[k] {
                ColumnKind::Continuous => number(c)?,
                ColumnKind::Categorical => {
                    let label = record[c].trim();
                    let next = codes[k].len();
                    let code = *codes[k].entry(label.to_string()).or_insert_with(|| {
                        labels[k].push(label.to_string());
                        next
                    });
                    code as f64
                }
            };
            rows.push(value);
        }
        if let Some(c) = output {
            ys.push(number(c)?);
        }
    }
    if rows.is_empty() {
        return Err(CsvError::Empty(path.to_path_buf()));
    }
    let names = inputs.iter().map(|&c| header[c].clone()).collect();
    let mut sample = DataSample::new(inputs.len(), rows, kinds.clone())?
        .with_names(names)?
        .standardized(schema.standardize);
    for (k, kind) in kinds.iter().enumerate() {
        if *kind == ColumnKind::Categorical {
            sample = sample.with_categories(k, std::mem::take(&mut labels[k]))?;
        }
    }
    if let Some(c) = output {
        sample = sample.with_outputs(ys)?.with_output_name(header[c].clone());
    }
    Ok(sample)
}

/// Writes the inputs, then the output column when present. Categorical
/// columns are written as their labels.
pub fn write_csv(sample: &DataSample, path: &Path) -> Result<(), CsvError> {
    let file = File::create(path).map_err(|source| CsvError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = sample.names().iter().map(String::as_str).collect();
    if sample.outputs().is_some() {
        header.push(sample.output_name().unwrap_or("y"));
    }
    w.write_record(&header)?;
    for r in 0..sample.n() {
        let mut fields: Vec<String> = sample
            .row(r)
            .iter()
            .enumerate()
            .map(|(c, &x)| match sample.categories(c) {
                Some(labels) => labels[x as usize].clone(),
                None => x.to_string(),
            })
            .collect();
        if let Some(ys) = sample.outputs() {
            fields.push(ys[r].to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn numeric_fixture() {
        let f = file("a,b\n1,2\n3,4\n5,6\n");
        let s = load_csv(f.path(), &Schema::new()).unwrap();
        assert_eq!((s.n(), s.p()), (3, 2));
        assert!(s.kinds().iter().all(|k| *k == ColumnKind::Continuous));
        assert_eq!(s.row(1), &[3.0, 4.0]);
        assert!(s.outputs().is_none());
    }

    #[test]
    fn categorical_and_output_columns() {
        let f = file("x,site,y\n0.5,A,1\n1.5,B,2\n2.5,A,3\n");
        let schema = Schema::new().with_output("y").with_categorical(["site"]);
        let s = load_csv(f.path(), &schema).unwrap();
        assert_eq!(s.kinds(), &[ColumnKind::Continuous, ColumnKind::Categorical]);
        assert_eq!(s.categories(1).unwrap(), &["A".to_string(), "B".to_string()]);
        assert_eq!(s.outputs().unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.row(2)[1], 0.0);
    }

    #[test]
    fn distinct_errors() {
        let f = file("a,b\n1,2\n3\n");
        assert!(matches!(load_csv(f.path(), &Schema::new()), Err(CsvError::Ragged { line: 3, .. })));
        let f = file("a,b\n1,2\n3,oops\n");
        match load_csv(f.path(), &Schema::new()) {
            Err(CsvError::Parse { line, column, .. }) => assert_eq!((line, column.as_str()), (3, "b")),
            other => panic!("{other:?}"),
        }
        let f = file("a,b\n");
        assert!(matches!(load_csv(f.path(), &Schema::new()), Err(CsvError::Empty(_))));
        let f = file("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), &Schema::new().with_output("y")),
            Err(CsvError::MissingColumn(_))
        ));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), &Schema::new()),
            Err(CsvError::Open { .. })
        ));
    }

    #[test]
    fn round_trip_is_value_identical() {
        let f = file("x,site,y\n0.1,B,1e-3\n-2.25,A,3.5\n7,B,0.30000000000000004\n");
        let schema = Schema::new().with_output("y").with_categorical(["site"]);
        let s = load_csv(f.path(), &schema).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&s, out.path()).unwrap();
        let back = load_csv(out.path(), &schema).unwrap();
        assert_eq!(back, s);
    }
}
