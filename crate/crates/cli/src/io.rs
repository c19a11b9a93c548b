use std::fs;
use std::path::{Path, PathBuf};

use grasscat::schema::{Record, VariableKind, VariableSchema, DEFAULT_STATE_CAP};
use grasscat::{Error, Matrix64};

use crate::error::{CliError, CliResult};

/// Enumeration caps, overridable through `GRASSCAT_CAP`.
#[derive(Clone, Copy, Debug)]
pub struct Caps {
    pub states: usize,
    pub dims: usize,
}

impl Caps {
    pub fn from_env() -> CliResult<Self> {
        match std::env::var("GRASSCAT_CAP") {
            Ok(v) => {
                let states: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::invalid(format!("GRASSCAT_CAP must be a positive integer, got `{v}`")))?;
                if states == 0 {
                    return Err(CliError::invalid("GRASSCAT_CAP must be positive"));
                }
                Ok(Caps {
                    states,
                    dims: states.ilog2() as usize,
                })
            }
            Err(_) => Ok(Caps {
                states: DEFAULT_STATE_CAP,
                dims: grasscat::grassmann::DEFAULT_DIM_CAP,
            }),
        }
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// Write `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn load_schema(path: &Path) -> CliResult<VariableSchema> {
    let schema: VariableSchema = parse_json(path, &read_text(path)?)?;
    if schema.is_empty() {
        return Err(CliError::invalid(format!("{}: schema declares no variables", path.display())));
    }
    Ok(schema)
}

/// Rows of a data file: schema records plus optional continuous columns.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub continuous: Option<Matrix64>,
    pub continuous_names: Vec<String>,
}

/// Read a CSV with a header row. Every schema variable must appear as a
/// column of integer levels; `continuous` names extra real-valued columns.
/// Any other column is an error.
pub fn load_data(path: &Path, schema: &VariableSchema, continuous: &[String]) -> CliResult<Dataset> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let var_cols = schema
        .variables()
        .iter()
        .map(|v| col(&v.name).ok_or_else(|| CliError::invalid(format!("{}: missing column `{}`", path.display(), v.name))))
        .collect::<CliResult<Vec<_>>>()?;
    let cont_cols = continuous
        .iter()
        .map(|n| col(n).ok_or_else(|| CliError::invalid(format!("{}: missing column `{n}`", path.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    for h in &header {
        if schema.index_of(h).is_none() && !continuous.contains(h) {
            return Err(CliError::invalid(format!("{}: unknown column `{h}`", path.display())));
        }
    }

    let mut records = Vec::new();
    let mut xs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 1;
        let ingest = |e: Error| {
            CliError::Core(Error::Ingest {
                row: line,
                source: Box::new(e),
            })
        };
        let mut levels = Vec::with_capacity(var_cols.len());
        for (v, &c) in schema.variables().iter().zip(&var_cols) {
            let cell = row.get(c).unwrap_or("");
            let level: i64 = cell.parse().map_err(|_| {
                ingest(Error::Schema(format!("variable `{}`: `{cell}` is not an integer level", v.name)))
            })?;
            if level < 0 || level >= v.levels as i64 {
                return Err(ingest(Error::LevelOutOfRange {
                    variable: v.name.clone(),
                    level,
                    max: v.dummies(),
                }));
            }
            levels.push(level as usize);
        }
        for (n, &c) in continuous.iter().zip(&cont_cols) {
            let cell = row.get(c).unwrap_or("");
            let x: f64 = cell
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| ingest(Error::Schema(format!("column `{n}`: `{cell}` is not a finite number"))))?;
            xs.push(x);
        }
        records.push(Record(levels));
    }
    if records.is_empty() {
        return Err(CliError::Core(Error::NoData));
    }
    let continuous_m = if continuous.is_empty() {
        None
    } else {
        Some(Matrix64::from_row_major(records.len(), continuous.len(), xs)?)
    };
    Ok(Dataset {
        records,
        continuous: continuous_m,
        continuous_names: continuous.to_vec(),
    })
}

/// Column label of each dummy: `Var=l` for categorical, `Var>=l` for ordinal.
pub fn dummy_labels(schema: &VariableSchema) -> Vec<String> {
    schema
        .variables()
        .iter()
        .flat_map(|v| {
            (1..v.levels).map(move |l| match v.kind {
                VariableKind::Categorical => format!("{}={l}", v.name),
                VariableKind::Ordinal => format!("{}>={l}", v.name),
            })
        })
        .collect()
}

/// Seventeen significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// RFC 4180 CSV with LF line endings, collected in memory.
pub struct CsvOut {
    w: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new() -> Self {
        CsvOut {
            w: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new()),
        }
    }

    pub fn row<I, S>(&mut self, cells: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(cells).map_err(|source| CliError::Csv {
            path: PathBuf::from("<csv>"),
            source,
        })
    }

    pub fn finish(self) -> String {
        let bytes = self.w.into_inner().expect("in-memory writer");
        String::from_utf8(bytes).expect("utf-8 csv")
    }
}

/// `model.json` → `model.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
