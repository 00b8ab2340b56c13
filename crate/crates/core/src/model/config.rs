use std::fmt::Write as _;

use super::ModelError;

/// Encoder and head hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub feature_channels: usize,
    /// Odd; convolutions use stride 1 and `kernel_size / 2` zero padding.
    pub kernel_size: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
    pub skip_enabled: bool,
    /// 1-based blocks that carry a shortcut; `None` means every block from 2.
    pub skip_blocks: Option<Vec<usize>>,
    pub input_channels: usize,
    pub input_samples: usize,
    pub n_classes: usize,
    pub head_hidden: usize,
    /// Softmax on the output layer; raw scores when false.
    pub output_softmax: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_blocks: 5,
            feature_channels: 64,
            kernel_size: 11,
            pool_kernel: 2,
            pool_stride: 2,
            dropout_p: 0.5,
            skip_enabled: true,
            skip_blocks: None,
            input_channels: 10,
            input_samples: 1500,
            n_classes: 13,
            head_hidden: 128,
            output_softmax: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |constraint: String| Err(ModelError::Config(constraint));
        if self.n_blocks == 0 {
            return fail("n_blocks must be at least 1".into());
        }
        if self.feature_channels == 0 {
            return fail("feature_channels must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return fail("pool_kernel and pool_stride must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.input_channels == 0 || self.input_samples == 0 {
            return fail("input_channels and input_samples must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.head_hidden == 0 {
            return fail("head_hidden must be positive".into());
        }
        if let Some(blocks) = &self.skip_blocks {
            if let Some(b) = blocks.iter().find(|&&b| b < 2 || b > self.n_blocks) {
                return fail(format!(
                    "skip_blocks entry {b} outside 2..={}",
                    self.n_blocks
                ));
            }
        }
        let mut t = self.input_samples;
        for k in 1..=self.n_blocks {
            if t < self.pool_kernel {
                return fail(format!(
                    "temporal length after pooling must stay >= 1: block {k} sees {t} samples, pool kernel {}",
                    self.pool_kernel
                ));
            }
            t = (t - self.pool_kernel) / self.pool_stride + 1;
        }
        Ok(())
    }

    /// Temporal length after every block, starting with the input length.
    pub fn temporal_lengths(&self) -> Vec<usize> {
        let mut out = vec![self.input_samples];
        let mut t = self.input_samples;
        for _ in 0..self.n_blocks {
            t = if t >= self.pool_kernel {
                (t - self.pool_kernel) / self.pool_stride + 1
            } else {
                0
            };
            out.push(t);
        }
        out
    }

    /// Width of the flattened encoder output.
    pub fn latent_features(&self) -> usize {
        self.feature_channels * self.temporal_lengths()[self.n_blocks]
    }

    /// Whether 1-based block `k` adds its pooled input.
    pub fn has_skip(&self, k: usize) -> bool {
        self.skip_enabled
            && k >= 2
            && self.skip_blocks.as_ref().map_or(true, |b| b.contains(&k))
    }

    /// `key = value` lines over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|r| ModelError::Config(format!("line {}: {r}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {key} from {v:?}"))
        }
        match key {
            "n_blocks" => self.n_blocks = p(key, value)?,
            "feature_channels" => self.feature_channels = p(key, value)?,
            "kernel_size" => self.kernel_size = p(key, value)?,
            "pool_kernel" => self.pool_kernel = p(key, value)?,
            "pool_stride" => self.pool_stride = p(key, value)?,
            "dropout_p" => self.dropout_p = p(key, value)?,
            "skip_enabled" => self.skip_enabled = p(key, value)?,
            "skip_blocks" => {
                self.skip_blocks = if value == "all" {
                    None
                } else {
                    Some(
                        value
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(|s| p(key, s))
                            .collect::<Result<_, _>>()?,
                    )
                }
            }
            "input_channels" => self.input_channels = p(key, value)?,
            "input_samples" => self.input_samples = p(key, value)?,
            "n_classes" => self.n_classes = p(key, value)?,
            "head_hidden" => self.head_hidden = p(key, value)?,
            "output_softmax" => self.output_softmax = p(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_blocks = {}", self.n_blocks);
        let _ = writeln!(s, "feature_channels = {}", self.feature_channels);
        let _ = writeln!(s, "kernel_size = {}", self.kernel_size);
        let _ = writeln!(s, "pool_kernel = {}", self.pool_kernel);
        let _ = writeln!(s, "pool_stride = {}", self.pool_stride);
        let _ = writeln!(s, "dropout_p = {}", self.dropout_p);
        let _ = writeln!(s, "skip_enabled = {}", self.skip_enabled);
        let skip = match &self.skip_blocks {
            None => "all".to_string(),
            Some(b) => b.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        };
        let _ = writeln!(s, "skip_blocks = {skip}");
        let _ = writeln!(s, "input_channels = {}", self.input_channels);
        let _ = writeln!(s, "input_samples = {}", self.input_samples);
        let _ = writeln!(s, "n_classes = {}", self.n_classes);
        let _ = writeln!(s, "head_hidden = {}", self.head_hidden);
        let _ = writeln!(s, "output_softmax = {}", self.output_softmax);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_recurrence() {
        let c = EncoderConfig::default();
        assert_eq!(c.temporal_lengths(), vec![1500, 750, 375, 187, 93, 46]);
        assert_eq!(c.latent_features(), 2944);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let bad = [
            EncoderConfig { n_blocks: 0, ..Default::default() },
            EncoderConfig { kernel_size: 10, ..Default::default() },
            EncoderConfig { n_classes: 1, ..Default::default() },
            EncoderConfig { feature_channels: 0, ..Default::default() },
            EncoderConfig { input_samples: 16, ..Default::default() },
            EncoderConfig { skip_blocks: Some(vec![1]), ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ModelError::Config(_))), "{c:?}");
        }
        let e = EncoderConfig { n_blocks: 0, ..Default::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("n_blocks"));
    }

    #[test]
    fn text_roundtrip() {
        let c = EncoderConfig {
            skip_blocks: Some(vec![2, 3]),
            output_softmax: false,
            dropout_p: 0.25,
            ..Default::default()
        };
        assert_eq!(EncoderConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            EncoderConfig::parse(&EncoderConfig::default().to_text()).unwrap(),
            EncoderConfig::default()
        );
        assert!(EncoderConfig::parse("depth = 3").is_err());
    }

    #[test]
    fn skip_selection() {
        let c = EncoderConfig { skip_blocks: Some(vec![2, 3]), ..Default::default() };
        let on: Vec<usize> = (1..=5).filter(|&k| c.has_skip(k)).collect();
        assert_eq!(on, vec![2, 3]);
        let c = EncoderConfig::default();
        assert_eq!((1..=5).filter(|&k| c.has_skip(k)).count(), 4);
        let c = EncoderConfig { skip_enabled: false, ..Default::default() };
        assert_eq!((1..=5).filter(|&k| c.has_skip(k)).count(), 0);
    }
}
