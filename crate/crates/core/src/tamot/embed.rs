use super::geometry::BBox;
use super::params::{BoundTracker, TrackerParams, QUERY_TOKENS};
use crate::error::{ensure, Result};
use crate::numerics::{ops, Matrix, Precision, Tape, Var};

/// Per-candidate inputs to the embedding networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInput {
    /// RoI features, `g^2 x C`.
    pub roi: Matrix,
    /// Mask pooled to the same `g x g` grid.
    pub mask: Vec<f64>,
    pub bbox: BBox,
}

/// Embedding nodes of one frame's candidates.
#[derive(Debug, Clone)]
pub(crate) struct EmbedVars {
    pub ae: Vec<Var>,
    pub q: Vec<Var>,
    /// Unit-normalized comprehensive features, `M x D`; `None` when `M = 0`.
    pub f: Option<Var>,
}

fn box_row(tape: &mut Tape, b: &BBox) -> Result<Var> {
    tape.constant(Matrix::row_vector(&b.to_array())?)
}

pub(crate) fn ae_tape(tape: &mut Tape, t: &BoundTracker, roi: Var, mask: Var, g: usize) -> Result<Var> {
    let lifted = tape.conv3x3(mask, t.conv_mask.w, g)?;
    let lifted = tape.add_row(lifted, t.conv_mask.b)?;
    let x = tape.add(lifted, roi)?;
    let y = tape.conv3x3(x, t.conv_fuse.w, g)?;
    let y = tape.add_row(y, t.conv_fuse.b)?;
    let pooled = tape.mean_rows(y)?;
    t.embed_proj.forward(tape, pooled)
}

pub(crate) fn position_tape(tape: &mut Tape, t: &BoundTracker, b: &BBox) -> Result<Var> {
    let x = box_row(tape, b)?;
    let h = t.pos_hidden.forward(tape, x)?;
    let h = tape.gelu(h)?;
    t.pos_out.forward(tape, h)
}

/// `q0 = qo` per candidate, joint self-attention over all `M x 8` tokens,
/// then each candidate's tokens cross-attend to its position-aware vector.
pub(crate) fn queries_tape(tape: &mut Tape, t: &BoundTracker, ap: &[Var]) -> Result<Vec<Var>> {
    if ap.is_empty() {
        return Ok(Vec::new());
    }
    let q0 = tape.concat_rows(&vec![t.qo; ap.len()])?;
    let q1 = t.spatial.forward(tape, q0, q0)?;
    let mut out = Vec::with_capacity(ap.len());
    for (m, a) in ap.iter().enumerate() {
        let qm = tape.slice_rows(q1, m * QUERY_TOKENS, QUERY_TOKENS)?;
        out.push(t.cross.forward(tape, qm, *a)?);
    }
    Ok(out)
}

/// Temporal refinement: for every token slot the newest query attends over
/// that slot's history, with the raw history entries as values.
pub(crate) fn temporal_tape(tape: &mut Tape, t: &BoundTracker, history: &[Var]) -> Result<Var> {
    ensure!(!history.is_empty(), "temporal attention over an empty history");
    let d = tape.value(history[0]).cols();
    let latest = *history.last().unwrap_or(&history[0]);
    let mut slots = Vec::with_capacity(QUERY_TOKENS);
    for j in 0..QUERY_TOKENS {
        let seq: Vec<Var> = history
            .iter()
            .map(|h| tape.slice_rows(*h, j, 1))
            .collect::<Result<_>>()?;
        let seq = tape.concat_rows(&seq)?;
        let cur = tape.slice_rows(latest, j, 1)?;
        let q = t.temporal_query.forward(tape, cur)?;
        let k = t.temporal_key.forward(tape, seq)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (d as f64).sqrt())?;
        let w = tape.softmax_rows(s)?;
        slots.push(tape.matmul(w, seq)?);
    }
    tape.concat_rows(&slots)
}

pub(crate) fn embed_tape(
    tape: &mut Tape,
    t: &BoundTracker,
    g: usize,
    inputs: &[CandidateInput],
) -> Result<EmbedVars> {
    let mut ae = Vec::with_capacity(inputs.len());
    let mut ap = Vec::with_capacity(inputs.len());
    for c in inputs {
        ensure!(
            c.roi.rows() == g * g && c.mask.len() == g * g,
            "candidate RoI/mask do not match a {g}x{g} grid"
        );
        let roi = tape.constant(c.roi.clone())?;
        let mask = tape.constant(Matrix::column_vector(&c.mask)?)?;
        ae.push(ae_tape(tape, t, roi, mask, g)?);
        let p = position_tape(tape, t, &c.bbox)?;
        let pooled = tape.mean_rows(roi)?;
        let pooled = t.pooled_proj.forward(tape, pooled)?;
        ap.push(tape.add(p, pooled)?);
    }
    let q = queries_tape(tape, t, &ap)?;
    let f = if inputs.is_empty() {
        None
    } else {
        let dq = tape.value(q[0]).cols();
        let mut rows = Vec::with_capacity(inputs.len());
        for (a, qm) in ae.iter().zip(&q) {
            let flat = tape.reshape(*qm, 1, QUERY_TOKENS * dq)?;
            rows.push(tape.concat_cols(&[*a, flat])?);
        }
        let stacked = tape.concat_rows(&rows)?;
        Some(tape.l2_normalize_rows(stacked)?)
    };
    Ok(EmbedVars { ae, q, f })
}

/// `ae`: mask lifted by the first conv, added to the RoI features, fused by
/// the second conv, average-pooled and projected.
pub fn fine_grained_embedding(
    params: &TrackerParams,
    roi: &Matrix,
    mask: &[f64],
    g: usize,
) -> Result<Vec<f64>> {
    ensure!(
        roi.rows() == g * g && mask.len() == g * g,
        "RoI features {:?} / mask of {} do not match a {g}x{g} grid",
        roi.shape(),
        mask.len()
    );
    ensure!(
        roi.cols() == params.feature_width(),
        "RoI width {} does not match tracker width {}",
        roi.cols(),
        params.feature_width()
    );
    let mut tape = Tape::new(Precision::F64);
    let t = params.bind(&mut tape, "")?;
    let r = tape.constant(roi.clone())?;
    let m = tape.constant(Matrix::column_vector(mask)?)?;
    let ae = ae_tape(&mut tape, &t, r, m, g)?;
    Ok(tape.value(ae).data().to_vec())
}

/// Two-layer MLP on `(cx, cy, w, h)`.
pub fn position_embedding(params: &TrackerParams, b: &BBox) -> Result<Vec<f64>> {
    let mut tape = Tape::new(Precision::F64);
    let t = params.bind(&mut tape, "")?;
    let p = position_tape(&mut tape, &t, b)?;
    Ok(tape.value(p).data().to_vec())
}

/// Learned queries per candidate and refined temporal queries per history.
#[derive(Debug, Clone, PartialEq)]
pub struct MemOutput {
    pub q: Vec<Matrix>,
    pub qe: Vec<Matrix>,
}

/// `ap` holds one position-aware vector per row; each history is a
/// tracklet's query sequence, oldest first.
pub fn mem_forward(params: &TrackerParams, ap: &Matrix, histories: &[Vec<Matrix>]) -> Result<MemOutput> {
    ensure!(
        ap.rows() == 0 || ap.cols() == params.query_dim(),
        "position vectors have width {}, queries {}",
        ap.cols(),
        params.query_dim()
    );
    let mut tape = Tape::new(Precision::F64);
    let t = params.bind(&mut tape, "")?;
    let rows: Vec<Var> = (0..ap.rows())
        .map(|m| tape.constant(Matrix::row_vector(ap.row(m))?))
        .collect::<Result<_>>()?;
    let q = queries_tape(&mut tape, &t, &rows)?;
    let q = q.iter().map(|v| tape.value(*v).clone()).collect();
    let mut qe = Vec::with_capacity(histories.len());
    for h in histories {
        let vars: Vec<Var> = h
            .iter()
            .map(|m| {
                ensure!(
                    m.shape() == (QUERY_TOKENS, params.query_dim()),
                    "history query has shape {:?}",
                    m.shape()
                );
                tape.constant(m.clone())
            })
            .collect::<Result<_>>()?;
        let e = temporal_tape(&mut tape, &t, &vars)?;
        qe.push(tape.value(e).clone());
    }
    Ok(MemOutput { q, qe })
}

/// Unit-normalized concatenation of `ae` and the flattened queries.
pub fn comprehensive_feature(ae: &[f64], q: &Matrix) -> Result<Vec<f64>> {
    let mut f = ae.to_vec();
    f.extend_from_slice(q.data());
    let n = ops::norm(&f);
    ensure!(n > 0.0, "comprehensive feature has zero norm");
    Ok(f.into_iter().map(|v| v / n).collect())
}
