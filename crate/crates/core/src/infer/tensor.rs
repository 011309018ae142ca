use crate::format::{LpfpCode, LpfpFormat};
use crate::infer::graph::Shape;

/// An LPFP-coded tensor: `codes[i]` decodes to `value × 2^sf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QTensor {
    pub shape: Shape,
    pub format: LpfpFormat,
    pub sf: i32,
    /// One code per byte, channel-major.
    pub codes: Vec<u8>,
}

impl QTensor {
    pub fn code(&self, i: usize) -> LpfpCode {
        LpfpCode::new(self.codes[i], self.format).expect("codes are validated on construction")
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let scale = 2f64.powi(-self.sf);
        let table: Vec<f64> = self.format.codes().map(|c| c.to_f64() * scale).collect();
        self.codes.iter().map(|&c| table[c as usize]).collect()
    }
}
