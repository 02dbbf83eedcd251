//! Regressor shapes for known model families.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelFamily {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub head_count: usize,
    pub layer_sizes: [usize; 4],
    /// Size of the reference sample collection for this family.
    pub reference_samples: usize,
}

pub const MODEL_FAMILIES: &[ModelFamily] = &[
    ModelFamily {
        name: "distilgpt2",
        aliases: &["distilgpt-2", "distil-gpt2"],
        head_count: 72,
        layer_sizes: [72, 64, 32, 1],
        reference_samples: 53_930,
    },
    ModelFamily {
        name: "gpt2",
        aliases: &["gpt-2"],
        head_count: 144,
        layer_sizes: [144, 64, 32, 1],
        reference_samples: 55_198,
    },
    ModelFamily {
        name: "gpt-neo-125m",
        aliases: &["gpt-neo-125M", "EleutherAI/gpt-neo-125m"],
        head_count: 144,
        layer_sizes: [144, 64, 32, 1],
        reference_samples: 56_897,
    },
    ModelFamily {
        name: "gpt-neo-1.3b",
        aliases: &["gpt-neo-1.3B", "EleutherAI/gpt-neo-1.3B"],
        head_count: 384,
        layer_sizes: [384, 256, 128, 1],
        reference_samples: 37_401,
    },
    ModelFamily {
        name: "gpt-j-6b",
        aliases: &["gpt-j-6B", "EleutherAI/gpt-j-6b"],
        head_count: 448,
        layer_sizes: [448, 256, 128, 1],
        reference_samples: 36_888,
    },
    ModelFamily {
        name: "llama-2-7b",
        aliases: &["llama2-7b", "Llama-2-7b-hf", "meta-llama/Llama-2-7b-hf"],
        head_count: 1024,
        layer_sizes: [1024, 256, 128, 1],
        reference_samples: 27_493,
    },
];

/// Looks up a family by name or alias, case-insensitively.
pub fn family(name: &str) -> Result<&'static ModelFamily> {
    MODEL_FAMILIES
        .iter()
        .find(|f| {
            f.name.eq_ignore_ascii_case(name)
                || f.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
        })
        .ok_or_else(|| {
            let known: Vec<_> = MODEL_FAMILIES.iter().map(|f| f.name).collect();
            Error::config(format!(
                "unknown model {name:?}; known: {}",
                known.join(", ")
            ))
        })
}

/// Default shape for a mask width without a named family.
pub fn default_layer_sizes(head_count: usize) -> Vec<usize> {
    if head_count <= 200 {
        vec![head_count, 64, 32, 1]
    } else {
        vec![head_count, 256, 128, 1]
    }
}

/// Parses `"72,64,32,1"`.
pub fn parse_layer_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad layer size {t:?} in {text:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_shapes() {
        assert_eq!(family("distilgpt2").unwrap().layer_sizes, [72, 64, 32, 1]);
        assert_eq!(
            family("Llama-2-7B").unwrap().layer_sizes,
            [1024, 256, 128, 1]
        );
        assert_eq!(family("gpt-neo-1.3B").unwrap().head_count, 384);
        assert!(family("bert").is_err());
        for f in MODEL_FAMILIES {
            assert_eq!(f.layer_sizes[0], f.head_count);
        }
    }

    #[test]
    fn defaults_and_parsing() {
        assert_eq!(default_layer_sizes(64), vec![64, 64, 32, 1]);
        assert_eq!(default_layer_sizes(1024), vec![1024, 256, 128, 1]);
        assert_eq!(parse_layer_sizes("12, 8,1").unwrap(), vec![12, 8, 1]);
        assert!(parse_layer_sizes("12,x,1").is_err());
    }
}
