pub mod audio_io;
pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod hybrid;
pub mod label;
pub mod reasoning;
pub mod refine;

pub use label::EmotionLabel;

/// Guide chapters, compiled so their code samples run as doc-tests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    pub mod quickstart {}
    #[doc = include_str!("../../../book/src/audio.md")]
    pub mod audio {}
    #[doc = include_str!("../../../book/src/features.md")]
    pub mod features {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    pub mod classifier {}
    #[doc = include_str!("../../../book/src/rules.md")]
    pub mod rules {}
    #[doc = include_str!("../../../book/src/routing.md")]
    pub mod routing {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    pub mod refinement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub mod corpus {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
