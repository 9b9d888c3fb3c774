use std::f64::consts::PI;

/// Zero crossings of the interpolation kernel on each side.
const HALF_TAPS: f64 = 32.0;

/// Band-limited resampling with a Hann-windowed sinc kernel. The output has
/// `round(len * to / from)` samples; the cutoff sits at the lower Nyquist.
pub fn resample(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = ((x.len() as u64 * to as u64 + from as u64 / 2) / from as u64) as usize;
    // cutoff relative to the input rate
    let cutoff = ratio.min(1.0);
    let half = HALF_TAPS / cutoff;
    (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = (t - half).ceil().max(0.0) as usize;
            let hi = ((t + half).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let arg = cutoff * d;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let w = 0.5 + 0.5 * (PI * d / half).cos();
                acc += xk as f64 * cutoff * sinc * w;
            }
            acc as f32
        })
        .collect()
}
