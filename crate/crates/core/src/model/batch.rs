use super::ModelError;

/// Token id reserved for padding.
pub const PAD_ID: u32 = 0;

/// Left-padded `rows x width` token matrix with its pad mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    rows: usize,
    width: usize,
    ids: Vec<u32>,
}

impl TokenBatch {
    /// Wraps a row-major id matrix. The mask is derived from the ids, so the
    /// pad/mask agreement holds by construction.
    pub fn new(rows: usize, width: usize, ids: Vec<u32>) -> Result<Self, ModelError> {
        if rows == 0 || width == 0 || ids.len() != rows * width {
            return Err(ModelError::InvalidBatch(format!(
                "{} ids for a {rows}x{width} batch",
                ids.len()
            )));
        }
        Ok(Self { rows, width, ids })
    }

    /// Left-pads each sequence to the longest one. Sequences must be
    /// non-empty and pad-free.
    pub fn from_sequences<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self, ModelError> {
        let width = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        if seqs.is_empty() || width == 0 {
            return Err(ModelError::InvalidBatch("no tokens".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * width);
        for seq in seqs {
            let seq = seq.as_ref();
            if seq.is_empty() {
                return Err(ModelError::InvalidBatch("empty sequence".into()));
            }
            if seq.contains(&PAD_ID) {
                return Err(ModelError::InvalidBatch("pad id inside a sequence".into()));
            }
            ids.extend(std::iter::repeat_n(PAD_ID, width - seq.len()));
            ids.extend_from_slice(seq);
        }
        Ok(Self {
            rows: seqs.len(),
            width,
            ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..(r + 1) * self.width]
    }

    /// 1 where the id is a real token, 0 at pads.
    pub fn mask(&self) -> Vec<u8> {
        self.ids.iter().map(|&id| u8::from(id != PAD_ID)).collect()
    }

    /// Number of non-pad entries.
    pub fn count_nonpad_tokens(&self) -> usize {
        self.ids.iter().filter(|&&id| id != PAD_ID).count()
    }

    /// The row with pads stripped.
    pub fn sequence(&self, r: usize) -> &[u32] {
        let row = self.row(r);
        let start = row.iter().position(|&id| id != PAD_ID).unwrap_or(row.len());
        &row[start..]
    }
}
