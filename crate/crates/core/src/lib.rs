//! Paired numeric series and structured events: a controlled AAOD
//! vocabulary with an iterative extraction loop, Hawkes arrivals,
//! impulse-response shocks over AR(4) background dynamics, a seeded
//! dataset generator, and slot-matching evaluation.

pub mod age;
pub mod dynamics;
pub mod evaluator;
pub mod fixtures;
pub mod formats;
pub mod generator;
pub mod hawkes;
mod linalg;
pub mod vocab;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/vocabulary.md")]
    mod vocabulary {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/hawkes.md")]
    mod hawkes {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/generator.md")]
    mod generator {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
