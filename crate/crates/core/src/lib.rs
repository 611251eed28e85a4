pub mod answer;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod selection;
pub mod skills;
pub mod synthesis;
pub mod template;

// The guide's code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/skills.md")]
    mod skills {}
    #[doc = include_str!("../../../book/src/gateway.md")]
    mod gateway {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/answering.md")]
    mod answering {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
