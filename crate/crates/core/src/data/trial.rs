use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Covariate, CovariateSchema, Record, TrialDataset};
use crate::error::{Error, Result};

const OUTCOME: &str = "outcome";
const TREATMENT: &str = "treatment";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads a comma-separated trial file with columns `outcome`, `treatment` and
/// one column per schema covariate (string levels). Row order is preserved.
pub fn load_trial(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<TrialDataset> {
    let path = path.as_ref();
    read_trial(open(path)?, schema).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.to_path_buf()),
        other => other,
    })
}

pub fn read_trial<R: Read>(reader: R, schema: &CovariateSchema) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile("<input>".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let outcome_col = column(OUTCOME)?;
    let treatment_col = column(TREATMENT)?;
    let covariate_cols = schema
        .covariates()
        .iter()
        .map(|c| column(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let field = |col: usize, name: &str| -> Result<&str> {
            match row.get(col) {
                Some(v) if !v.is_empty() && !v.eq_ignore_ascii_case("na") => Ok(v),
                _ => Err(Error::MissingField {
                    row: row_no,
                    column: name.to_string(),
                }),
            }
        };
        let raw_outcome = field(outcome_col, OUTCOME)?;
        let outcome: f64 = raw_outcome
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::BadOutcome {
                row: row_no,
                value: raw_outcome.to_string(),
            })?;
        let treated = match field(treatment_col, TREATMENT)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::NonBinaryTreatment {
                    row: row_no,
                    value: other.to_string(),
                })
            }
        };
        let mut levels = Vec::with_capacity(covariate_cols.len());
        for (cov, &col) in schema.covariates().iter().zip(&covariate_cols) {
            let label = field(col, &cov.name)?;
            let idx = cov.level_index(label).ok_or_else(|| Error::UnmappedLevel {
                row: row_no,
                covariate: cov.name.clone(),
                level: label.to_string(),
            })?;
            levels.push(idx);
        }
        records.push(Record {
            outcome,
            covariates: levels,
            treated,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile("<input>".into()));
    }
    TrialDataset::new(schema.clone(), records)
}

/// Derives a schema from a trial file: every column other than `outcome` and
/// `treatment` is a covariate, in file order, with its distinct levels sorted.
pub fn infer_schema(path: impl AsRef<Path>) -> Result<CovariateSchema> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = rdr.headers()?.clone();
    let cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != OUTCOME && *h != TREATMENT)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); cols.len()];
    let mut rows = 0usize;
    for row in rdr.records() {
        let row = row?;
        rows += 1;
        for (k, (col, _)) in cols.iter().enumerate() {
            if let Some(v) = row.get(*col) {
                if !v.is_empty() {
                    levels[k].insert(v.to_string());
                }
            }
        }
    }
    if rows == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    CovariateSchema::new(
        cols.into_iter()
            .zip(levels)
            .map(|((_, name), lv)| Covariate {
                name,
                levels: lv.into_iter().collect(),
            })
            .collect(),
    )
}

/// Writes a dataset in the same layout `load_trial` reads. Outcomes use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_trial<W: Write>(data: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![OUTCOME.to_string(), TREATMENT.to_string()];
    header.extend(data.schema().covariates().iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![format!("{:?}", r.outcome), (r.treated as u8).to_string()];
        row.extend(
            r.covariates
                .iter()
                .zip(data.schema().covariates())
                .map(|(&l, c)| c.levels[l].clone()),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            Covariate::new("sex", &["F", "M"]),
            Covariate::new("race", &["A", "B"]),
        ])
        .unwrap()
    }

    const SIX_ROWS: &str = "outcome,treatment,sex,race\n\
        1.5,1,F,A\n\
        0.2,0,F,B\n\
        -3,1,M,A\n\
        2.25,0,M,B\n\
        0.0,1,F,B\n\
        4,0,M,A\n";

    #[test]
    fn parses_six_rows() {
        let data = read_trial(SIX_ROWS.as_bytes(), &schema()).unwrap();
        assert_eq!(data.n(), 6);
        let lattice = crate::data::enumerate_lattice(data.schema()).unwrap();
        assert_eq!(lattice.len(), 4);
        assert_eq!(data.records()[2].covariates, vec![1, 0]);
        assert!(data.records()[2].treated);
        assert_eq!(data.records()[2].outcome, -3.0);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let text = "outcome,treatment,sex,race\n1,2,F,A\n";
        let err = read_trial(text.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("non-binary treatment"));
    }

    #[test]
    fn rejects_unknown_level_naming_row_and_covariate() {
        let text = "outcome,treatment,sex,race\n1,1,F,A\n1,0,Z,A\n";
        let err = read_trial(text.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::UnmappedLevel {
                row,
                covariate,
                level,
            } => {
                assert_eq!(row, 2);
                assert_eq!(covariate, "sex");
                assert_eq!(level, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_column_and_fields() {
        let text = "outcome,treatment,sex\n1,1,F\n";
        assert!(matches!(
            read_trial(text.as_bytes(), &schema()),
            Err(Error::MissingColumn(c)) if c == "race"
        ));
        let text = "outcome,treatment,sex,race\n,1,F,A\n";
        assert!(matches!(
            read_trial(text.as_bytes(), &schema()),
            Err(Error::MissingField { row: 1, .. })
        ));
        let text = "outcome,treatment,sex,race\nabc,1,F,A\n";
        assert!(matches!(
            read_trial(text.as_bytes(), &schema()),
            Err(Error::BadOutcome { .. })
        ));
        let text = "outcome,treatment,sex,race\n";
        assert!(matches!(
            read_trial(text.as_bytes(), &schema()),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn write_then_read_reproduces_records() {
        let data = read_trial(SIX_ROWS.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_trial(&data, &mut buf).unwrap();
        let back = read_trial(buf.as_slice(), &schema()).unwrap();
        assert_eq!(back, data);
    }
}
