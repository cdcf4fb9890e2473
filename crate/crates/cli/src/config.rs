//! Run configuration: one TOML file, overridden key by key from flags.
//!
//! ```toml
//! out = "results"
//! seed = [0, 1, 2]
//! metric = "cosine"        # restrict to one metric variant
//! desk_scale = true        # false selects the full-study budgets
//!
//! [signature]              # any DescriptorConfig field
//! magnitude_grid = 32
//! k_set = [3, 5, 10]
//!
//! [signature.budgets]      # overrides on top of the desk or full table
//! twonn = 2000
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use uts::signature::{Budgets, DescriptorConfig};
use uts::Metric;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    out: Option<PathBuf>,
    seed: Option<Vec<u64>>,
    metric: Option<Metric>,
    desk_scale: Option<bool>,
    signature: Option<toml::Table>,
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<Vec<u64>>,
    pub metric: Option<Metric>,
    pub desk_scale: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: PathBuf,
    pub desk_scale: bool,
    pub descriptors: DescriptorConfig,
}

impl RunConfig {
    pub fn seeds(&self) -> &[u64] {
        &self.descriptors.seeds
    }

    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => read_file(path)?,
            None => ConfigFile::default(),
        };
        let desk_scale = flags.desk_scale.or(file.desk_scale).unwrap_or(true);
        let mut table = file.signature.unwrap_or_default();
        let budget_overrides = match table.remove("budgets") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => bail!("`signature.budgets` must be a table"),
            None => toml::Table::new(),
        };
        let mut descriptors: DescriptorConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid [signature] table")?;
        let base = if desk_scale { Budgets::desk() } else { Budgets::full() };
        let mut budgets = toml::Table::try_from(&base)?;
        budgets.extend(budget_overrides);
        descriptors.budgets = toml::Value::Table(budgets)
            .try_into()
            .context("invalid [signature.budgets] table")?;
        if let Some(seeds) = flags.seed.clone().or(file.seed) {
            descriptors.seeds = seeds;
        }
        if let Some(m) = flags.metric.or(file.metric) {
            descriptors.metrics = vec![m];
        }
        descriptors.validate()?;
        Ok(Self {
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            desk_scale,
            descriptors,
        })
    }
}

fn read_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_are_desk_scale() {
        let c = RunConfig::resolve(&Overrides::default()).unwrap();
        assert!(c.desk_scale);
        assert_eq!(c.descriptors, DescriptorConfig::default());
        assert_eq!(c.out, PathBuf::from("."));
    }

    #[test]
    fn flags_override_file_and_budgets_layer_on_the_table() {
        let f = write(
            "seed = [7]\nmetric = \"euclidean\"\ndesk_scale = false\n\
             [signature]\nmagnitude_grid = 16\n[signature.budgets]\ntwonn = 123\n",
        );
        let mut flags = Overrides { config: Some(f.path().into()), ..Overrides::default() };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.seeds(), &[7]);
        assert_eq!(c.descriptors.metrics, vec![Metric::Euclidean]);
        assert_eq!(c.descriptors.magnitude_grid, 16);
        assert_eq!(c.descriptors.budgets.twonn, 123);
        assert_eq!(c.descriptors.budgets.magnitude, Budgets::full().magnitude);

        flags.seed = Some(vec![1, 2]);
        flags.desk_scale = Some(true);
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.seeds(), &[1, 2]);
        assert_eq!(c.descriptors.budgets.magnitude, Budgets::desk().magnitude);
        assert_eq!(c.descriptors.budgets.twonn, 123);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write("sede = [1]\n");
        let flags = Overrides { config: Some(f.path().into()), ..Overrides::default() };
        assert!(RunConfig::resolve(&flags).is_err());
        let f = write("[signature]\nmagnitud_grid = 3\n");
        let flags = Overrides { config: Some(f.path().into()), ..Overrides::default() };
        assert!(RunConfig::resolve(&flags).is_err());
    }
}
