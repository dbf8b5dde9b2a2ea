use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    DeskSmall,
    Deeplabv3plus,
}

/// Settings that only the `deeplabv3plus` backbone reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsppConfig {
    pub channels: usize,
    /// Dilation rates of the 3×3 atrous branches.
    pub rates: Vec<usize>,
    pub low_level_channels: usize,
    pub decoder_channels: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            rates: vec![2, 4, 6],
            low_level_channels: 16,
            decoder_channels: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub attention_spatial: bool,
    pub attention_classgate: bool,
    /// Whether the network carries a classification branch at all.
    pub classification_branch: bool,
    /// Embedding width of the similarity projections; `None` means
    /// `max(C / 8, 1)` for a `C`-channel feature map.
    pub selfattn_embed_channels: Option<usize>,
    /// Hidden width of the classifier; 0 maps pooled features straight to the logit.
    pub classifier_hidden: usize,
    pub aspp: AsppConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::DeskSmall,
            input_size: 64,
            encoder_channels: vec![16, 32, 64, 128],
            attention_spatial: true,
            attention_classgate: true,
            classification_branch: true,
            selfattn_embed_channels: None,
            classifier_hidden: 32,
            aspp: AsppConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Channels of the decoder features that feed the attention block and the
    /// output projection.
    pub fn feature_channels(&self) -> usize {
        match self.backbone {
            BackboneKind::DeskSmall => self.encoder_channels[1],
            BackboneKind::Deeplabv3plus => self.aspp.decoder_channels,
        }
    }

    /// Channels of the tensor the classification branch pools.
    pub fn coarse_channels(&self) -> usize {
        match self.backbone {
            BackboneKind::DeskSmall => *self.encoder_channels.last().expect("validated"),
            BackboneKind::Deeplabv3plus => self.aspp.channels,
        }
    }

    pub fn embed_channels(&self) -> usize {
        self.selfattn_embed_channels
            .unwrap_or_else(|| (self.feature_channels() / 8).max(1))
    }

    /// Overall downsampling factor of the encoder.
    pub fn encoder_stride(&self) -> usize {
        let stages = self.encoder_channels.len();
        match self.backbone {
            BackboneKind::DeskSmall => 1 << stages,
            BackboneKind::Deeplabv3plus => 1 << (stages - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.encoder_channels.len() < 3 {
            return bad(format!(
                "encoder needs at least 3 stages, got {}",
                self.encoder_channels.len()
            ));
        }
        if self.encoder_channels.contains(&0) {
            return bad("encoder channel widths must be positive".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.encoder_stride()) {
            return bad(format!(
                "input_size {} must be a positive multiple of {}",
                self.input_size,
                self.encoder_stride()
            ));
        }
        if self.backbone == BackboneKind::Deeplabv3plus {
            let a = &self.aspp;
            if a.channels == 0 || a.low_level_channels == 0 || a.decoder_channels == 0 {
                return bad("aspp widths must be positive".into());
            }
            if a.rates.contains(&0) {
                return bad("aspp dilation rates must be positive".into());
            }
        }
        let embed = self.embed_channels();
        if embed == 0 || embed > self.feature_channels() {
            return bad(format!(
                "selfattn_embed_channels {embed} must lie in [1, {}]",
                self.feature_channels()
            ));
        }
        if self.attention_classgate && !self.classification_branch {
            return bad("the classification gate needs a classification branch".into());
        }
        Ok(())
    }
}
