use serde::{Deserialize, Serialize};

use crate::dsp::HOP;
use crate::error::{invalid, Result};
use crate::nn::ConvGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub width: usize,
    pub filters: usize,
    pub stride: usize,
}

/// Layer geometry of the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub sinc: ConvSpec,
    pub blocks: Vec<ConvSpec>,
    pub embedding_dim: usize,
    pub sample_rate: u32,
    /// Minimum band-pass width of every sinc filter, Hz.
    pub min_band_hz: f64,
    /// Lowest cutoff used to initialize the sinc filters, Hz.
    pub init_low_hz: f64,
}

const FULL_WIDTHS: [usize; 7] = [20, 11, 11, 11, 11, 11, 11];
const FULL_STRIDES: [usize; 7] = [10, 2, 1, 2, 1, 2, 2];

impl EncoderConfig {
    fn with_filters(sinc_filters: usize, filters: [usize; 7], embedding_dim: usize) -> Self {
        EncoderConfig {
            sinc: ConvSpec { width: 251, filters: sinc_filters, stride: 1 },
            blocks: (0..7)
                .map(|i| ConvSpec { width: FULL_WIDTHS[i], filters: filters[i], stride: FULL_STRIDES[i] })
                .collect(),
            embedding_dim,
            sample_rate: 16_000,
            min_band_hz: 50.0,
            init_low_hz: 30.0,
        }
    }

    /// Full-size encoder: 64 sinc filters of width 251 then seven conv blocks
    /// up to 512 channels, projected to 100 dims.
    pub fn full() -> Self {
        Self::with_filters(64, [64, 128, 128, 256, 256, 512, 512], 100)
    }

    /// Same kernel widths, strides and embedding size as [`EncoderConfig::full`]
    /// with narrower layers, for single-core training runs.
    pub fn desk() -> Self {
        Self::with_filters(16, [16, 32, 32, 64, 64, 128, 128], 100)
    }

    /// A few-parameter stack that still decimates by 160, for gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            sinc: ConvSpec { width: 15, filters: 2, stride: 1 },
            blocks: vec![
                ConvSpec { width: 12, filters: 3, stride: 10 },
                ConvSpec { width: 5, filters: 3, stride: 4 },
                ConvSpec { width: 5, filters: 3, stride: 4 },
            ],
            embedding_dim: 4,
            sample_rate: 16_000,
            min_band_hz: 50.0,
            init_low_hz: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.sinc).chain(&self.blocks);
        for spec in all {
            if spec.width == 0 || spec.filters == 0 || spec.stride == 0 {
                return Err(invalid!("degenerate layer {:?}", spec));
            }
        }
        if self.sinc.stride != 1 || self.sinc.width.is_multiple_of(2) {
            return Err(invalid!("sinc layer needs an odd width and stride 1, got {:?}", self.sinc));
        }
        if self.total_stride() != HOP {
            return Err(invalid!("strides multiply to {}, expected {}", self.total_stride(), HOP));
        }
        if self.embedding_dim == 0 {
            return Err(invalid!("embedding_dim must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.min_band_hz > 0.0 && self.min_band_hz < nyquist && self.init_low_hz >= 0.0 && self.init_low_hz < nyquist) {
            return Err(invalid!("sinc band limits out of range"));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product::<usize>() * self.sinc.stride
    }

    /// (width, stride) of every layer in order, the final projection included.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        std::iter::once((self.sinc.width, self.sinc.stride))
            .chain(self.blocks.iter().map(|b| (b.width, b.stride)))
            .chain(std::iter::once((1, 1)))
            .collect()
    }

    /// Input samples that can influence one output frame.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (w, s) in self.layers() {
            rf += (w - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Half-open range of input samples (before clipping to `[0, len)`) that
    /// frame `frame` of a `len`-sample input depends on.
    pub fn receptive_window(&self, frame: usize, len: usize) -> Result<(isize, isize)> {
        let mut lens = vec![len];
        let mut geoms = Vec::new();
        for (w, s) in self.layers() {
            let g = ConvGeom::same(w, s, *lens.last().unwrap())?;
            lens.push(g.out_len(*lens.last().unwrap())?);
            geoms.push(g);
        }
        let (mut lo, mut hi) = (frame as isize, frame as isize);
        for g in geoms.iter().rev() {
            lo = lo * g.stride as isize - g.pad_left as isize;
            hi = hi * g.stride as isize - g.pad_left as isize + g.width as isize - 1;
        }
        Ok((lo, hi + 1))
    }

    /// Learnable scalars in the sinc layer: two cutoffs per filter.
    pub fn sinc_parameter_count(&self) -> usize {
        2 * self.sinc.filters
    }
}
