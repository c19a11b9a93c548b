//! Versioned JSON envelope for fitted and hand-written models.

use std::path::Path;

use grasscat::factor::FactorModel;
use grasscat::schema::VariableSchema;
use grasscat::{MixedParams64, StructuredParams64};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::{parse_json, read_text, to_json, write_text};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Grassmann,
    Factor,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub schema: Option<VariableSchema>,
    pub kind: ModelKind,
    pub params: Value,
    pub fit_report: Option<Value>,
}

/// Factor-model parameters with the names of the continuous columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorParams {
    pub continuous: Vec<String>,
    pub model: FactorModel<f64>,
}

/// Typed view of [`ModelFile::params`].
#[derive(Clone, Debug)]
pub enum Model {
    Grassmann(StructuredParams64),
    Factor(FactorParams),
    Mixed(MixedParams64),
}

impl ModelFile {
    pub fn new(schema: Option<VariableSchema>, model: &Model, fit_report: Option<Value>) -> Self {
        let (kind, params) = match model {
            Model::Grassmann(p) => (ModelKind::Grassmann, serde_json::to_value(p)),
            Model::Factor(p) => (ModelKind::Factor, serde_json::to_value(p)),
            Model::Mixed(p) => (ModelKind::Mixed, serde_json::to_value(p)),
        };
        ModelFile {
            format_version: FORMAT_VERSION,
            schema,
            kind,
            params: params.expect("model parameters serialize"),
            fit_report,
        }
    }

    pub fn load(path: &Path) -> CliResult<(Self, Model)> {
        let file: ModelFile = parse_json(path, &read_text(path)?)?;
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::invalid(format!(
                "{}: unsupported format_version {}",
                path.display(),
                file.format_version
            )));
        }
        let typed = |e: serde_json::Error| CliError::Json {
            path: path.to_path_buf(),
            source: e,
        };
        let model = match file.kind {
            ModelKind::Grassmann => Model::Grassmann(serde_json::from_value(file.params.clone()).map_err(typed)?),
            ModelKind::Factor => Model::Factor(serde_json::from_value(file.params.clone()).map_err(typed)?),
            ModelKind::Mixed => Model::Mixed(serde_json::from_value(file.params.clone()).map_err(typed)?),
        };
        let needs_schema = file.kind != ModelKind::Mixed;
        match (&file.schema, needs_schema) {
            (None, true) => {
                return Err(CliError::invalid(format!("{}: {:?} model needs a schema", path.display(), file.kind)))
            }
            (Some(_), false) => {
                return Err(CliError::invalid(format!("{}: mixed models carry no schema", path.display())))
            }
            _ => {}
        }
        if let (Some(schema), Model::Grassmann(p)) = (&file.schema, &model) {
            p.validate(schema)?;
        }
        if let (Some(schema), Model::Factor(p)) = (&file.schema, &model) {
            p.model.validate(schema)?;
            if p.continuous.len() != p.model.p_x() {
                return Err(CliError::invalid("continuous column names disagree with p_x"));
            }
        }
        Ok((file, model))
    }

    pub fn to_string(&self) -> String {
        to_json(self)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_text(path, &self.to_string())
    }

    pub fn schema(&self) -> &VariableSchema {
        self.schema.as_ref().expect("schema checked at load")
    }
}
