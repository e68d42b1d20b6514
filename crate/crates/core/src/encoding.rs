//! Packing the training matrix into slot vectors.
//!
//! `Z` (n rows, `1 + f` columns) is cut into `m x g` sub-matrices with
//! `m * g` equal to the slot count. Each block is stored row by row, so slot
//! `i * g + j` holds `block[i][j]`; the ragged last row and column blocks are
//! zero-padded.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::he::{HeParams, MAX_LOG_N};

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("batch rows {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("batch rows {batch} exceed the {slots} slots")]
    BatchTooLarge { batch: usize, slots: usize },
    #[error("cannot lay out an empty matrix")]
    Empty,
    #[error("{rows}x{cols} block does not fit a {m}x{g} layout")]
    Oversize {
        rows: usize,
        cols: usize,
        m: usize,
        g: usize,
    },
    #[error("matrix is {rows}x{cols}, layout expects {want_rows}x{want_cols}")]
    Shape {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("vector of length {len} is longer than {cap}")]
    Length { len: usize, cap: usize },
    #[error("expected {want} blocks, found {found}")]
    BlockCount { want: usize, found: usize },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

/// Partition of an `n x (1 + f)` matrix into `m x g` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub g: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
    pub pad_rows: usize,
    pub pad_cols: usize,
}

impl BlockLayout {
    /// Layout of a single full `m x g` block.
    pub fn for_block(m: usize, g: usize) -> Self {
        Self {
            n: m,
            f: g - 1,
            m,
            g,
            row_blocks: 1,
            col_blocks: 1,
            pad_rows: 0,
            pad_cols: 0,
        }
    }

    fn from_parts(n: usize, f: usize, m: usize, g: usize) -> Self {
        let cols = f + 1;
        let row_blocks = n.div_ceil(m);
        let col_blocks = cols.div_ceil(g);
        Self {
            n,
            f,
            m,
            g,
            row_blocks,
            col_blocks,
            pad_rows: row_blocks * m - n,
            pad_cols: col_blocks * g - cols,
        }
    }

    pub fn slots(&self) -> usize {
        self.m * self.g
    }

    pub fn cols(&self) -> usize {
        self.f + 1
    }

    pub fn blocks(&self) -> usize {
        self.row_blocks * self.col_blocks
    }

    /// Real (unpadded) rows of row block `rb`.
    pub fn rows_in(&self, rb: usize) -> usize {
        self.m.min(self.n.saturating_sub(rb * self.m))
    }

    /// Real (unpadded) columns of column block `cb`.
    pub fn cols_in(&self, cb: usize) -> usize {
        self.g.min(self.cols().saturating_sub(cb * self.g))
    }

    /// `(row block, col block, slot)` holding matrix entry `(i, j)`.
    pub fn locate(&self, i: usize, j: usize) -> Option<(usize, usize, usize)> {
        (i < self.n && j < self.cols()).then(|| (i / self.m, j / self.g, (i % self.m) * self.g + j % self.g))
    }
}

pub fn plan_layout(n: usize, f: usize, params: &HeParams, batch_rows: usize) -> Result<BlockLayout, EncodingError> {
    if n == 0 {
        return Err(EncodingError::Empty);
    }
    if !batch_rows.is_power_of_two() {
        return Err(EncodingError::NotPowerOfTwo(batch_rows));
    }
    let slots = params.slots();
    if batch_rows > slots {
        return Err(EncodingError::BatchTooLarge {
            batch: batch_rows,
            slots,
        });
    }
    Ok(BlockLayout::from_parts(n, f, batch_rows, slots / batch_rows))
}

/// Row-major packing of one sub-matrix into `m * g` slots.
pub fn pack_block(block: ArrayView2<'_, f64>, layout: &BlockLayout) -> Result<Vec<f64>, EncodingError> {
    let (rows, cols) = block.dim();
    if rows > layout.m || cols > layout.g {
        return Err(EncodingError::Oversize {
            rows,
            cols,
            m: layout.m,
            g: layout.g,
        });
    }
    let mut out = vec![0.0; layout.slots()];
    for ((i, j), &v) in block.indexed_iter() {
        out[i * layout.g + j] = v;
    }
    Ok(out)
}

/// The leading `rows x cols` corner of a packed block.
pub fn unpack_block(
    slots: &[f64],
    layout: &BlockLayout,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, EncodingError> {
    if slots.len() != layout.slots() {
        return Err(EncodingError::Length {
            len: slots.len(),
            cap: layout.slots(),
        });
    }
    if rows > layout.m || cols > layout.g {
        return Err(EncodingError::Oversize {
            rows,
            cols,
            m: layout.m,
            g: layout.g,
        });
    }
    Ok(Array2::from_shape_fn((rows, cols), |(i, j)| slots[i * layout.g + j]))
}

/// Every block of `z`, indexed `[row block][col block]`.
pub fn pack_matrix(z: ArrayView2<'_, f64>, layout: &BlockLayout) -> Result<Vec<Vec<Vec<f64>>>, EncodingError> {
    if z.dim() != (layout.n, layout.cols()) {
        return Err(EncodingError::Shape {
            rows: z.nrows(),
            cols: z.ncols(),
            want_rows: layout.n,
            want_cols: layout.cols(),
        });
    }
    (0..layout.row_blocks)
        .map(|rb| {
            (0..layout.col_blocks)
                .map(|cb| {
                    let r0 = rb * layout.m;
                    let c0 = cb * layout.g;
                    let sub = z.slice(s![r0..r0 + layout.rows_in(rb), c0..c0 + layout.cols_in(cb)]);
                    pack_block(sub, layout)
                })
                .collect()
        })
        .collect()
}

/// Inverse of [`pack_matrix`], padding stripped.
pub fn unpack_matrix(blocks: &[Vec<Vec<f64>>], layout: &BlockLayout) -> Result<Array2<f64>, EncodingError> {
    let found: usize = blocks.iter().map(Vec::len).sum();
    if blocks.len() != layout.row_blocks || blocks.iter().any(|r| r.len() != layout.col_blocks) {
        return Err(EncodingError::BlockCount {
            want: layout.blocks(),
            found,
        });
    }
    let mut z = Array2::zeros((layout.n, layout.cols()));
    for (rb, row) in blocks.iter().enumerate() {
        for (cb, slots) in row.iter().enumerate() {
            let part = unpack_block(slots, layout, layout.rows_in(rb), layout.cols_in(cb))?;
            let (r0, c0) = (rb * layout.m, cb * layout.g);
            z.slice_mut(s![r0..r0 + part.nrows(), c0..c0 + part.ncols()])
                .assign(&part);
        }
    }
    Ok(z)
}

/// Copies the segment of `v` belonging to each column block into every row
/// of that block.
pub fn replicate_rows(v: ArrayView1<'_, f64>, layout: &BlockLayout) -> Result<Vec<Vec<f64>>, EncodingError> {
    let cap = layout.g * layout.col_blocks;
    if v.len() > cap {
        return Err(EncodingError::Length { len: v.len(), cap });
    }
    Ok((0..layout.col_blocks)
        .map(|cb| {
            let mut out = vec![0.0; layout.slots()];
            for j in 0..layout.g {
                let Some(&x) = v.get(cb * layout.g + j) else { break };
                for i in 0..layout.m {
                    out[i * layout.g + j] = x;
                }
            }
            out
        })
        .collect())
}

/// Ones in column 0 of every row, zeros elsewhere.
pub fn column_mask(layout: &BlockLayout) -> Vec<f64> {
    (0..layout.slots())
        .map(|k| if k % layout.g == 0 { 1.0 } else { 0.0 })
        .collect()
}

/// Filter selecting global column 0: [`column_mask`] for the first column
/// block, zeros for the others.
pub fn filter_first_column(layout: &BlockLayout, col_block: usize) -> Vec<f64> {
    if col_block == 0 {
        column_mask(layout)
    } else {
        vec![0.0; layout.slots()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Z,
    Bbar,
    W,
    V,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Z => "z",
            BlockKind::Bbar => "bbar",
            BlockKind::W => "w",
            BlockKind::V => "v",
        }
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "z" => Ok(BlockKind::Z),
            "bbar" => Ok(BlockKind::Bbar),
            "w" => Ok(BlockKind::W),
            "v" => Ok(BlockKind::V),
            other => Err(format!("unknown block kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRecord {
    pub kind: BlockKind,
    pub row_block: usize,
    pub col_block: usize,
    pub file: String,
}

/// Describes a set of packed ciphertext files.
///
/// ```text
/// qglr-manifest v1
/// layout n=11982 f=196 m=1024 g=32 row_blocks=12 col_blocks=7
/// block kind=z row=0 col=0 file=z-0-0.slots
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub layout: BlockLayout,
    pub blocks: Vec<BlockRecord>,
}

pub const MANIFEST_HEADER: &str = "qglr-manifest v1";

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.layout;
        writeln!(f, "{MANIFEST_HEADER}")?;
        writeln!(
            f,
            "layout n={} f={} m={} g={} row_blocks={} col_blocks={}",
            l.n, l.f, l.m, l.g, l.row_blocks, l.col_blocks
        )?;
        for b in &self.blocks {
            writeln!(
                f,
                "block kind={} row={} col={} file={}",
                b.kind.as_str(),
                b.row_block,
                b.col_block,
                b.file
            )?;
        }
        Ok(())
    }
}

fn fields<'a>(rest: &'a str, keys: &[&str], line: usize) -> Result<Vec<&'a str>, EncodingError> {
    let err = |message: String| EncodingError::Manifest { line, message };
    let pairs: Vec<(&str, &str)> = rest
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))
        })
        .collect::<Result<_, _>>()?;
    if pairs.len() != keys.len() {
        return Err(err(format!("expected {} fields, found {}", keys.len(), pairs.len())));
    }
    pairs
        .iter()
        .zip(keys)
        .map(|(&(k, v), &want)| {
            if k != want {
                Err(err(format!("expected key {want:?}, found {k:?}")))
            } else {
                Ok(v)
            }
        })
        .collect()
}

impl FromStr for Manifest {
    type Err = EncodingError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: String| EncodingError::Manifest { line, message };
        let num = |line: usize, v: &str| v.parse::<usize>().map_err(|_| err(line, format!("bad count {v:?}")));

        match lines.next() {
            Some((_, MANIFEST_HEADER)) => {}
            Some((line, other)) => return Err(err(line, format!("expected {MANIFEST_HEADER:?}, found {other:?}"))),
            None => return Err(err(0, "empty manifest".into())),
        }

        let (line, layout_line) = lines.next().ok_or_else(|| err(0, "missing layout line".into()))?;
        let rest = layout_line
            .strip_prefix("layout ")
            .ok_or_else(|| err(line, "expected a layout line".into()))?;
        let v = fields(rest, &["n", "f", "m", "g", "row_blocks", "col_blocks"], line)?
            .into_iter()
            .map(|x| num(line, x))
            .collect::<Result<Vec<_>, _>>()?;
        let (n, f, m, g) = (v[0], v[1], v[2], v[3]);
        let max_slots = 1usize << (MAX_LOG_N - 1);
        if n == 0 || !m.is_power_of_two() || !g.is_power_of_two() || m.checked_mul(g).is_none_or(|s| s > max_slots) {
            return Err(err(line, format!("unsupported layout n={n} m={m} g={g}")));
        }
        if f.checked_add(1).is_none() {
            return Err(err(line, "feature count overflows".into()));
        }
        let layout = BlockLayout::from_parts(n, f, m, g);
        if (v[4], v[5]) != (layout.row_blocks, layout.col_blocks) {
            return Err(err(
                line,
                format!(
                    "block counts {}x{} disagree with the layout ({}x{})",
                    v[4], v[5], layout.row_blocks, layout.col_blocks
                ),
            ));
        }

        let mut blocks = Vec::new();
        let mut seen = HashSet::new();
        for (line, l) in lines {
            let rest = l
                .strip_prefix("block ")
                .ok_or_else(|| err(line, format!("unexpected line {l:?}")))?;
            let v = fields(rest, &["kind", "row", "col", "file"], line)?;
            let kind: BlockKind = v[0].parse().map_err(|m| err(line, m))?;
            let (row_block, col_block) = (num(line, v[1])?, num(line, v[2])?);
            if row_block >= layout.row_blocks || col_block >= layout.col_blocks {
                return Err(err(line, format!("block ({row_block}, {col_block}) is out of range")));
            }
            if !seen.insert((kind, row_block, col_block)) {
                return Err(err(line, "duplicate block".into()));
            }
            blocks.push(BlockRecord {
                kind,
                row_block,
                col_block,
                file: v[3].to_string(),
            });
        }
        Ok(Manifest { layout, blocks })
    }
}
