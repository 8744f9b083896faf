//! The selection specification language.
//!
//! A specification is a sequence of selector instances, optionally named,
//! that reference earlier instances with `%name` and the set of all functions
//! with `%%`. `!import("module.capi")` splices another specification's
//! instances in place. The last instance is the pipeline's entry point.
//!
//! ```text
//! !import("mpi.capi")
//! excluded = join(inSystemHeader(%%), inlineSpecified(%%))
//! kernels  = flops(">=", 10, loopDepth(">=", 1, %%))
//! join(subtract(%kernels, %excluded), %mpi_comm)
//! ```

mod format;
mod lexer;
mod parser;
mod resolve;

use std::fmt;

use thiserror::Error;

pub use format::format_spec;
pub use parser::{parse_spec, parse_spec_file, parse_spec_named};
pub use resolve::{FsResolver, ImportResolver, MapResolver, NoImports, ResolvedModule, SPEC_PATH_ENV};

/// Comparison operator used by the metric filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
}

impl CmpOp {
    pub fn parse(s: &str) -> Option<CmpOp> {
        Some(match s {
            ">=" => CmpOp::Ge,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            "<" => CmpOp::Lt,
            "==" => CmpOp::Eq,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Eq => "==",
        }
    }

    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

/// Selector types known to the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectorKind {
    /// A binding whose right-hand side is a bare reference (`x = %y`).
    Identity,
    Join,
    Subtract,
    InSystemHeader,
    InlineSpecified,
    Flops,
    LoopDepth,
    ByName,
    OnCallPathTo,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Selector,
    Str,
    Int,
    Op,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamType::Selector => "selector",
            ParamType::Str => "string",
            ParamType::Int => "integer",
            ParamType::Op => "comparison operator",
        })
    }
}

/// Parameter list of a selector kind. `variadic` repeats the last parameter.
#[derive(Debug, Clone, Copy)]
pub struct Signature {
    pub params: &'static [ParamType],
    pub required: usize,
    pub variadic: bool,
}

impl Signature {
    pub fn accepts(&self, n: usize) -> bool {
        n >= self.required && (self.variadic || n <= self.params.len())
    }

    pub fn param(&self, i: usize) -> ParamType {
        self.params[i.min(self.params.len() - 1)]
    }

    fn describe(&self) -> String {
        if self.variadic {
            format!("at least {}", self.required)
        } else if self.required == self.params.len() {
            self.required.to_string()
        } else {
            format!("{} to {}", self.required, self.params.len())
        }
    }
}

use ParamType::{Int, Op, Selector, Str};

impl SelectorKind {
    pub const CALLABLE: [SelectorKind; 9] = [
        SelectorKind::Join,
        SelectorKind::Subtract,
        SelectorKind::InSystemHeader,
        SelectorKind::InlineSpecified,
        SelectorKind::Flops,
        SelectorKind::LoopDepth,
        SelectorKind::ByName,
        SelectorKind::OnCallPathTo,
        SelectorKind::Coarse,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            SelectorKind::Identity => "identity",
            SelectorKind::Join => "join",
            SelectorKind::Subtract => "subtract",
            SelectorKind::InSystemHeader => "inSystemHeader",
            SelectorKind::InlineSpecified => "inlineSpecified",
            SelectorKind::Flops => "flops",
            SelectorKind::LoopDepth => "loopDepth",
            SelectorKind::ByName => "byName",
            SelectorKind::OnCallPathTo => "onCallPathTo",
            SelectorKind::Coarse => "coarse",
        }
    }

    /// Kinds that may appear in call position. `Identity` is implicit only.
    pub fn from_keyword(s: &str) -> Option<SelectorKind> {
        SelectorKind::CALLABLE.into_iter().find(|k| k.keyword() == s)
    }

    pub fn signature(self) -> Signature {
        let (params, required, variadic): (&'static [ParamType], usize, bool) = match self {
            SelectorKind::Identity => (&[Selector], 1, false),
            SelectorKind::Join => (&[Selector], 1, true),
            SelectorKind::Subtract => (&[Selector, Selector], 2, false),
            SelectorKind::InSystemHeader | SelectorKind::InlineSpecified => (&[Selector], 1, false),
            SelectorKind::Flops | SelectorKind::LoopDepth => (&[Op, Int, Selector], 3, false),
            SelectorKind::ByName => (&[Str, Selector], 2, false),
            SelectorKind::OnCallPathTo | SelectorKind::Coarse => (&[Selector, Selector], 1, false),
        };
        Signature {
            params,
            required,
            variadic,
        }
    }
}

/// Reference to a set-valued input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectorRef {
    /// `%%`
    Universe,
    /// `%name`
    Named(String),
    /// An anonymous instance written in argument position.
    Inline(Box<SelectorInstance>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Argument {
    Str(String),
    Int(i64),
    Op(CmpOp),
    Selector(SelectorRef),
}

impl Argument {
    pub fn param_type(&self) -> ParamType {
        match self {
            Argument::Str(_) => ParamType::Str,
            Argument::Int(_) => ParamType::Int,
            Argument::Op(_) => ParamType::Op,
            Argument::Selector(_) => ParamType::Selector,
        }
    }

    pub fn as_selector(&self) -> Option<&SelectorRef> {
        match self {
            Argument::Selector(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorInstance {
    pub name: Option<String>,
    pub kind: SelectorKind,
    pub args: Vec<Argument>,
}

impl SelectorInstance {
    /// Label used in reports: the name, or `<kind>#<index>` for anonymous ones.
    pub fn label(&self, index: usize) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("<{}>#{index}", self.kind.keyword()),
        }
    }
}

/// Validated, import-expanded instance sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectorPipeline {
    pub instances: Vec<SelectorInstance>,
}

impl SelectorPipeline {
    /// The last instance in sequence order.
    pub fn entry(&self) -> Option<&SelectorInstance> {
        self.instances.last()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.instances
            .iter()
            .position(|i| i.name.as_deref() == Some(name))
    }
}

/// Location of a token within a named source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pos {
    pub source: String,
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.source, self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("{at}: lexical error: {msg}")]
    Lex { at: Pos, msg: String },
    #[error("{at}: syntax error: {msg}")]
    Syntax { at: Pos, msg: String },
    #[error("{at}: unknown selector kind `{name}`")]
    UnknownKind { at: Pos, name: String },
    #[error("{at}: `{kind}` takes {expected} argument(s), got {found}")]
    Arity {
        at: Pos,
        kind: &'static str,
        expected: String,
        found: usize,
    },
    #[error("{at}: argument {index} of `{kind}` must be a {expected}, got a {found}")]
    ArgType {
        at: Pos,
        kind: &'static str,
        index: usize,
        expected: ParamType,
        found: ParamType,
    },
    #[error("{at}: invalid comparison operator \"{op}\"")]
    BadOperator { at: Pos, op: String },
    #[error("{at}: invalid name pattern \"{pattern}\": {msg}")]
    BadPattern { at: Pos, pattern: String, msg: String },
    #[error("{at}: undefined reference `%{name}`")]
    UndefinedReference { at: Pos, name: String },
    #[error("{at}: duplicate instance name `{name}`")]
    DuplicateName { at: Pos, name: String },
    #[error("{at}: import cycle: {}", .chain.join(" -> "))]
    ImportCycle { at: Pos, chain: Vec<String> },
    #[error("{at}: cannot import \"{module}\": {reason}")]
    Import { at: Pos, module: String, reason: String },
    #[error("no entry instance: the specification is empty")]
    NoEntry,
}
