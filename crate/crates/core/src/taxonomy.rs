//! The four-category, eight-subcategory hallucination taxonomy and the
//! mapping from observed states onto it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::degeneration::{DegenerationKind, DegenerationVerdict};
use crate::error::{Error, Result};
use crate::sandbox::{ExecutionOutcome, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Mapping,
    Naming,
    Resource,
    Logic,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Mapping,
        Category::Naming,
        Category::Resource,
        Category::Logic,
    ];

    pub fn subcategories(self) -> [Subcategory; 2] {
        use Subcategory::*;
        match self {
            Category::Mapping => [DataCompliance, StructureAccess],
            Category::Naming => [Identity, ExternalSource],
            Category::Resource => [PhysicalConstraint, ComputationalBoundary],
            Category::Logic => [LogicDeviation, LogicBreakdown],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Mapping => "Mapping",
            Category::Naming => "Naming",
            Category::Resource => "Resource",
            Category::Logic => "Logic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subcategory {
    DataCompliance,
    StructureAccess,
    Identity,
    ExternalSource,
    PhysicalConstraint,
    ComputationalBoundary,
    LogicDeviation,
    LogicBreakdown,
}

impl Subcategory {
    /// Taxonomy order: grouped by category, two per category.
    pub const ALL: [Subcategory; 8] = [
        Subcategory::DataCompliance,
        Subcategory::StructureAccess,
        Subcategory::Identity,
        Subcategory::ExternalSource,
        Subcategory::PhysicalConstraint,
        Subcategory::ComputationalBoundary,
        Subcategory::LogicDeviation,
        Subcategory::LogicBreakdown,
    ];

    pub fn category(self) -> Category {
        category_of(self)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subcategory::DataCompliance => "DataCompliance",
            Subcategory::StructureAccess => "StructureAccess",
            Subcategory::Identity => "Identity",
            Subcategory::ExternalSource => "ExternalSource",
            Subcategory::PhysicalConstraint => "PhysicalConstraint",
            Subcategory::ComputationalBoundary => "ComputationalBoundary",
            Subcategory::LogicDeviation => "LogicDeviation",
            Subcategory::LogicBreakdown => "LogicBreakdown",
        }
    }

    /// Two-letter column heading used in report tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Subcategory::DataCompliance => "DC",
            Subcategory::StructureAccess => "SA",
            Subcategory::Identity => "ID",
            Subcategory::ExternalSource => "ES",
            Subcategory::PhysicalConstraint => "PC",
            Subcategory::ComputationalBoundary => "CB",
            Subcategory::LogicDeviation => "LD",
            Subcategory::LogicBreakdown => "LB",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Subcategory::DataCompliance => "Data Compliance",
            Subcategory::StructureAccess => "Structure Access",
            Subcategory::Identity => "Identity",
            Subcategory::ExternalSource => "External Source",
            Subcategory::PhysicalConstraint => "Physical Constraint",
            Subcategory::ComputationalBoundary => "Computational Boundary",
            Subcategory::LogicDeviation => "Logic Deviation",
            Subcategory::LogicBreakdown => "Logic Breakdown",
        }
    }
}

impl fmt::Display for Subcategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcategory::ALL
            .into_iter()
            .find(|c| c.name() == s || c.abbrev() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcategory `{s}`")))
    }
}

pub fn category_of(subcategory: Subcategory) -> Category {
    use Subcategory::*;
    match subcategory {
        DataCompliance | StructureAccess => Category::Mapping,
        Identity | ExternalSource => Category::Naming,
        PhysicalConstraint | ComputationalBoundary => Category::Resource,
        LogicDeviation | LogicBreakdown => Category::Logic,
    }
}

pub const CAUSE_OUTPUT_MISMATCH: &str = "output_mismatch";
pub const CAUSE_SYNTACTIC: &str = "syntactic";
pub const CAUSE_TIME_LIMIT: &str = "time_limit";
pub const CAUSE_MEMORY_LIMIT: &str = "memory_limit";

/// One hallucination observation. `cause` keeps the raw state (exception
/// name, `output_mismatch`, degeneration kind) below subcategory level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "LabelRecord", into = "LabelRecord")]
pub struct HallucinationLabel {
    pub subcategory: Subcategory,
    pub cause: String,
}

impl HallucinationLabel {
    pub fn new(subcategory: Subcategory, cause: impl Into<String>) -> Self {
        HallucinationLabel {
            subcategory,
            cause: cause.into(),
        }
    }

    pub fn category(&self) -> Category {
        category_of(self.subcategory)
    }
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    category: Category,
    subcategory: Subcategory,
    cause: String,
}

impl From<HallucinationLabel> for LabelRecord {
    fn from(l: HallucinationLabel) -> Self {
        LabelRecord {
            category: l.category(),
            subcategory: l.subcategory,
            cause: l.cause,
        }
    }
}

impl TryFrom<LabelRecord> for HallucinationLabel {
    type Error = String;

    fn try_from(r: LabelRecord) -> std::result::Result<Self, String> {
        if category_of(r.subcategory) != r.category {
            return Err(format!(
                "subcategory {} does not belong to category {}",
                r.subcategory, r.category
            ));
        }
        Ok(HallucinationLabel::new(r.subcategory, r.cause))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Fallback {
    /// Unmapped exceptions are reported as such and carry no label.
    #[default]
    #[serde(rename = "Unmapped-report")]
    Report,
    #[serde(rename = "Unmapped-as-LogicDeviation")]
    AsLogicDeviation,
}

/// Exception-name binning for runtime failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationTable {
    pub exception_map: BTreeMap<String, Subcategory>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for ClassificationTable {
    fn default() -> Self {
        use Subcategory::*;
        let entries: [(&str, Subcategory); 14] = [
            ("TypeError", DataCompliance),
            ("ValueError", DataCompliance),
            ("ZeroDivisionError", DataCompliance),
            ("IndexError", StructureAccess),
            ("KeyError", StructureAccess),
            ("NameError", Identity),
            ("AttributeError", Identity),
            ("UnboundLocalError", Identity),
            ("ImportError", ExternalSource),
            ("ModuleNotFoundError", ExternalSource),
            ("MemoryError", PhysicalConstraint),
            ("RecursionError", PhysicalConstraint),
            ("OverflowError", ComputationalBoundary),
            ("FloatingPointError", ComputationalBoundary),
        ];
        ClassificationTable {
            exception_map: entries
                .into_iter()
                .map(|(name, sub)| (name.to_string(), sub))
                .collect(),
            fallback: Fallback::Report,
        }
    }
}

impl ClassificationTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: ClassificationTable = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.exception_map.keys().find(|k| k.trim().is_empty()) {
            return Err(Error::Config(format!(
                "classification table has an empty exception name `{bad}`"
            )));
        }
        Ok(())
    }

    /// Exact name first, then the unqualified name (`pkg.mod.FooError` → `FooError`).
    pub fn lookup(&self, exception_name: &str) -> Option<Subcategory> {
        self.exception_map.get(exception_name).copied().or_else(|| {
            let short = exception_name.rsplit('.').next()?;
            self.exception_map.get(short).copied()
        })
    }
}

/// Result of classifying one observed state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Classification {
    Pass,
    Hallucination { label: HallucinationLabel },
    Unmapped { cause: String },
    HarnessFault { message: String },
}

impl Classification {
    pub fn label(&self) -> Option<&HallucinationLabel> {
        match self {
            Classification::Hallucination { label } => Some(label),
            _ => None,
        }
    }

    fn of(subcategory: Subcategory, cause: impl Into<String>) -> Self {
        Classification::Hallucination {
            label: HallucinationLabel::new(subcategory, cause),
        }
    }
}

pub fn degeneration_cause(kind: DegenerationKind) -> &'static str {
    match kind {
        DegenerationKind::None => "none",
        DegenerationKind::Stuttering => "stuttering",
        DegenerationKind::InfiniteEnumeration => "infinite_enumeration",
        DegenerationKind::Gibberish => "gibberish",
    }
}

/// Maps a degeneration verdict and, for non-degenerate programs, an execution
/// outcome to one state.
pub fn classify(
    verdict: &DegenerationVerdict,
    outcome: Option<&ExecutionOutcome>,
    table: &ClassificationTable,
) -> Classification {
    if verdict.kind != DegenerationKind::None {
        return Classification::of(
            Subcategory::LogicBreakdown,
            degeneration_cause(verdict.kind),
        );
    }
    let Some(outcome) = outcome else {
        return Classification::HarnessFault {
            message: "non-degenerate program has no execution outcome".into(),
        };
    };
    match outcome.status {
        Status::SandboxError => Classification::HarnessFault {
            message: outcome
                .exception_message
                .clone()
                .unwrap_or_else(|| "sandbox error".into()),
        },
        Status::SyntaxFailure => Classification::of(Subcategory::LogicBreakdown, CAUSE_SYNTACTIC),
        Status::MemoryLimitExceeded => {
            Classification::of(Subcategory::PhysicalConstraint, CAUSE_MEMORY_LIMIT)
        }
        Status::TimeLimitExceeded => {
            Classification::of(Subcategory::ComputationalBoundary, CAUSE_TIME_LIMIT)
        }
        Status::RuntimeFailure => {
            let name = outcome
                .exception_name
                .clone()
                .unwrap_or_else(|| crate::sandbox::UNKNOWN_ERROR.into());
            match (table.lookup(&name), table.fallback) {
                (Some(sub), _) => Classification::of(sub, name),
                (None, Fallback::AsLogicDeviation) => {
                    Classification::of(Subcategory::LogicDeviation, name)
                }
                (None, Fallback::Report) => Classification::Unmapped { cause: name },
            }
        }
        Status::WrongOutput => {
            Classification::of(Subcategory::LogicDeviation, CAUSE_OUTPUT_MISMATCH)
        }
        Status::Pass => Classification::Pass,
    }
}
