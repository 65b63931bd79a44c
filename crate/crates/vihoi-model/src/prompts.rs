//! Prompt templates for prior extraction and reference-image synthesis, plus
//! exact token-span bookkeeping for the embedded annotation.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocab;
use crate::{Error, Result};

const EXTRACTION_PREFIX: &str =
    "We are conducting the text-to-HOI motion generation task and the given textual description is: ";
const EXTRACTION_SUFFIX: &str = ". We want to extract motion priors from the following three \
reference images to facilitate the generation of Human-Object-Interaction motion. These priors \
include the human pose, the object's shape and size, and the contact region on the object during \
interaction, etc. The initial position of the object is in front of the person.";

const T2I_SUFFIX: &str = ". Please first divide the above-described interaction process into \
three stages, and ensure that there is contact between the character and the object in each \
stage. Then, synthesize one image for each of the three stages. You should ensure each image \
contains only one character and one object, and that the object's shape and size match those in \
the provided image. Moreover, both the background and the character should be realistic and \
consistent across the three generated images.";

/// A tokenized extraction prompt with the annotation's token span located.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBundle {
    pub tokens: Vec<u32>,
    pub text_span: (usize, usize),
    pub raw: String,
}

impl PromptBundle {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Instruction handed to the multimodal encoder together with the three
/// reference images. The annotation is substituted verbatim and its token
/// span is recovered exactly; the tokenizer lower-cases, so span recovery
/// compares case-insensitively.
pub fn build_extraction_prompt(text: &str) -> Result<PromptBundle> {
    let vocab = Vocab::builtin();
    if text.trim().is_empty() {
        return Err(Error::TokenizationMismatch("empty annotation".into()));
    }
    let raw = format!("{EXTRACTION_PREFIX}{text}{EXTRACTION_SUFFIX}");
    let prefix = vocab.tokenize(EXTRACTION_PREFIX);
    let body = vocab.tokenize(text);
    let suffix = vocab.tokenize(EXTRACTION_SUFFIX);
    let mut tokens = prefix.clone();
    tokens.extend_from_slice(&body);
    tokens.extend_from_slice(&suffix);
    if tokens != vocab.tokenize(&raw) {
        return Err(Error::TokenizationMismatch(
            "template concatenation is not token-stable".into(),
        ));
    }
    let span = (prefix.len(), prefix.len() + body.len());
    let recovered = vocab.detokenize(&tokens[span.0..span.1]);
    if recovered != text.to_lowercase() {
        return Err(Error::TokenizationMismatch(format!(
            "span gives {recovered:?}, annotation is {text:?}"
        )));
    }
    Ok(PromptBundle { tokens, text_span: span, raw })
}

/// Instruction for the text-to-image backend: the annotation first, then the
/// three-stage synthesis request.
pub fn build_t2i_prompt(text: &str) -> String {
    format!("{text}{T2I_SUFFIX}")
}
