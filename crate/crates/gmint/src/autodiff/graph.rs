use super::tensor::matmul_into;
use super::{AutodiffError, Result, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { name: String },
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise add of two same-shape tensors.
    Add { a: NodeId, b: NodeId },
    /// `[m,n] + [n]`, bias added to every row.
    AddRow { a: NodeId, bias: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    /// Row-wise softmax over the trailing axis.
    Softmax { a: NodeId },
    /// `table[V,d]` gathered at `ids` -> `[T,d]`.
    EmbeddingLookup { table: NodeId, ids: Vec<usize> },
    /// `[T,d] -> [1,d]`, mean over rows.
    MeanPool { a: NodeId },
    /// Row-wise layer normalization with learned scale/shift.
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    /// Multi-head scaled dot-product attention; q, k, v are `[T,d]`.
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize },
    /// Mean binary cross-entropy of predictions `[m,1]` against 0/1 targets.
    Bce { pred: NodeId, targets: Vec<f64> },
    /// Mean categorical cross-entropy of probability rows `[m,n]` against
    /// class indices.
    Cce { probs: NodeId, targets: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recording tape. Forward calls append nodes; `backward` consumes the tape.
pub struct Graph {
    nodes: Vec<Node>,
    /// Parameter node ids in registration order.
    params: Vec<NodeId>,
    consumed: bool,
}

/// Gradients of one recorded loss with respect to every registered
/// parameter, in registration order, plus the loss value itself.
#[derive(Debug, Clone)]
pub struct GradientMap {
    entries: Vec<(String, Tensor)>,
    loss_value: f64,
}

impl GradientMap {
    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn loss_value(&self) -> f64 {
        self.loss_value
    }

    /// Mean of several gradient maps with identical entry layouts.
    /// Summation runs in slice order, so the result does not depend on how
    /// the individual maps were computed (or on how many threads produced
    /// them).
    pub fn mean(maps: &[GradientMap]) -> Result<GradientMap> {
        let first = maps.first().ok_or(AutodiffError::ShapeMismatch {
            op: "gradient_mean",
            detail: "empty gradient list".into(),
        })?;
        let mut entries: Vec<(String, Tensor)> = first
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        let mut loss = 0.0;
        let scale = 1.0 / maps.len() as f64;
        for map in maps {
            if map.entries.len() != entries.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "gradient_mean",
                    detail: "gradient maps have different entry counts".into(),
                });
            }
            for ((name, acc), (other_name, g)) in entries.iter_mut().zip(&map.entries) {
                if name != other_name || acc.shape() != g.shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "gradient_mean",
                        detail: format!("entry {name} does not match {other_name}"),
                    });
                }
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
            loss += scale * map.loss_value;
        }
        Ok(GradientMap { entries, loss_value: loss })
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new(), consumed: false }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// Register a trainable parameter. The tensor is snapshotted; later
    /// mutation of the source does not affect this graph.
    pub fn param(&mut self, name: &str, t: &Tensor) -> NodeId {
        let id = self.push(Op::Param { name: name.to_string() }, t.clone());
        self.params.push(id);
        id
    }

    fn shape_err(op: &'static str, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch { op, detail }
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(id);
        match t.shape() {
            [m, n] => Ok((*m, *n)),
            s => Err(Self::shape_err(op, format!("expected rank-2 tensor, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(Self::shape_err(
                "matmul",
                format!("[{m},{ka}] x [{kb},{n}]: inner dimensions differ"),
            ));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_into(out.data_mut(), self.value(a).data(), self.value(b).data(), m, ka, n, false, false);
        Ok(self.push(Op::MatMul { a, b }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    /// Add a rank-1 bias `[n]` to every row of `[m,n]`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(bias).shape() != [n] {
            return Err(Self::shape_err(
                "add_row",
                format!("bias {:?} does not match row length {n}", self.value(bias).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        let bias_data = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(&bias_data) {
                *x += b;
            }
        }
        let _ = m;
        Ok(self.push(Op::AddRow { a, bias }, out))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push(Op::Relu { a }, out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            *x = 1.0 / (1.0 + (-*x).exp());
        }
        self.push(Op::Sigmoid { a }, out)
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        let n = out.cols();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::Softmax { a }, out)
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (vocab, dim) = self.dims2(table, "embedding_lookup")?;
        if ids.is_empty() {
            return Err(Self::shape_err("embedding_lookup", "empty id sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Self::shape_err(
                "embedding_lookup",
                format!("token id {bad} out of range for vocabulary size {vocab}"),
            ));
        }
        let table_data = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&table_data[i * dim..(i + 1) * dim]);
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(Op::EmbeddingLookup { table, ids: ids.to_vec() }, out))
    }

    pub fn mean_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let (t, d) = self.dims2(a, "mean_pool")?;
        let mut data = vec![0.0; d];
        for row in self.value(a).data().chunks(d) {
            for (acc, x) in data.iter_mut().zip(row) {
                *acc += x;
            }
        }
        for x in &mut data {
            *x /= t as f64;
        }
        let out = Tensor::new(vec![1, d], data)?;
        Ok(self.push(Op::MeanPool { a }, out))
    }

    const LN_EPS: f64 = 1e-5;

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (_, d) = self.dims2(x, "layer_norm")?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Self::shape_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} do not match feature size {d}",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        let mut out = self.value(x).clone();
        let gamma_d = self.value(gamma).data().to_vec();
        let beta_d = self.value(beta).data().to_vec();
        for row in out.data_mut().chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + Self::LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&gamma_d).zip(&beta_d) {
                *v = g * (*v - mean) * inv + b;
            }
        }
        Ok(self.push(Op::LayerNorm { x, gamma, beta }, out))
    }

    /// Multi-head scaled dot-product self-attention over `[T,d]` inputs.
    pub fn scaled_dot_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
    ) -> Result<NodeId> {
        let (t, d) = self.dims2(q, "scaled_dot_attention")?;
        for (name, id) in [("key", k), ("value", v)] {
            if self.value(id).shape() != [t, d] {
                return Err(Self::shape_err(
                    "scaled_dot_attention",
                    format!("{name} shape {:?} does not match query [{t},{d}]", self.value(id).shape()),
                ));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Self::shape_err(
                "scaled_dot_attention",
                format!("model dim {d} not divisible by {heads} heads"),
            ));
        }
        let out = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            t,
            d,
            heads,
        );
        let out = Tensor::new(vec![t, d], out)?;
        Ok(self.push(Op::Attention { q, k, v, heads }, out))
    }

    /// Mean binary cross-entropy of `[m,1]` probabilities against 0/1 labels.
    pub fn binary_cross_entropy(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId> {
        let (m, n) = self.dims2(pred, "binary_cross_entropy")?;
        if n != 1 || m != targets.len() {
            return Err(Self::shape_err(
                "binary_cross_entropy",
                format!("predictions [{m},{n}] vs {} targets", targets.len()),
            ));
        }
        let mut loss = 0.0;
        for (&p, &y) in self.value(pred).data().iter().zip(targets) {
            let p = clamp_prob(p);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        loss /= m as f64;
        Ok(self.push(Op::Bce { pred, targets: targets.to_vec() }, Tensor::scalar(loss)))
    }

    /// Mean categorical cross-entropy of probability rows against class
    /// indices.
    pub fn categorical_cross_entropy(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, n) = self.dims2(probs, "categorical_cross_entropy")?;
        if m != targets.len() {
            return Err(Self::shape_err(
                "categorical_cross_entropy",
                format!("{m} rows vs {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= n) {
            return Err(Self::shape_err(
                "categorical_cross_entropy",
                format!("class index {bad} out of range for {n} classes"),
            ));
        }
        let mut loss = 0.0;
        let data = self.value(probs).data();
        for (r, &y) in targets.iter().enumerate() {
            loss -= clamp_prob(data[r * n + y]).ln();
        }
        loss /= m as f64;
        Ok(self.push(Op::Cce { probs, targets: targets.to_vec() }, Tensor::scalar(loss)))
    }

    /// Reverse traversal from `loss`. Consumes the tape; the gradient map
    /// lists every registered parameter in registration order, with zero
    /// gradients for parameters the loss does not depend on.
    pub fn backward(&mut self, loss: NodeId) -> Result<GradientMap> {
        if self.consumed {
            return Err(AutodiffError::StaleGraph);
        }
        self.consumed = true;
        let loss_tensor = self.value(loss);
        if loss_tensor.len() != 1 {
            return Err(AutodiffError::NonScalarLoss { len: loss_tensor.len() });
        }
        let loss_value = loss_tensor.data()[0];

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            // Re-insert for params; intermediate grads are dropped after use.
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param { .. } => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let n = self.nodes[b.0].value.cols();
                    // dA = dC * B^T, dB = A^T * dC
                    let mut da = vec![0.0; m * k];
                    matmul_into(&mut da, &gout, self.nodes[b.0].value.data(), m, n, k, false, true);
                    accumulate(&mut grads[a.0], da);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&mut db, self.nodes[a.0].value.data(), &gout, k, m, n, true, false);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], gout.clone());
                    accumulate(&mut grads[b.0], gout);
                }
                Op::AddRow { a, bias } => {
                    let n = self.nodes[bias.0].value.len();
                    let mut gbias = vec![0.0; n];
                    for row in gout.chunks(n) {
                        for (g, x) in gbias.iter_mut().zip(row) {
                            *g += x;
                        }
                    }
                    accumulate(&mut grads[bias.0], gbias);
                    accumulate(&mut grads[a.0], gout);
                }
                Op::Relu { a } => {
                    let mut g = gout;
                    for (gi, &x) in g.iter_mut().zip(self.nodes[a.0].value.data()) {
                        if x <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sigmoid { a } => {
                    let mut g = gout;
                    for (gi, &y) in g.iter_mut().zip(self.nodes[idx].value.data()) {
                        *gi *= y * (1.0 - y);
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Softmax { a } => {
                    let y = self.nodes[idx].value.data();
                    let n = self.nodes[idx].value.cols();
                    let mut g = gout;
                    for (grow, yrow) in g.chunks_mut(n).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                        for (gi, yi) in grow.iter_mut().zip(yrow) {
                            *gi = yi * (*gi - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::EmbeddingLookup { table, ids } => {
                    let (vocab, dim) =
                        (self.nodes[table.0].value.rows(), self.nodes[table.0].value.cols());
                    let mut gt = vec![0.0; vocab * dim];
                    for (row, &i) in gout.chunks(dim).zip(ids) {
                        for (g, x) in gt[i * dim..(i + 1) * dim].iter_mut().zip(row) {
                            *g += x;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::MeanPool { a } => {
                    let t = self.nodes[a.0].value.rows();
                    let d = self.nodes[a.0].value.cols();
                    let scale = 1.0 / t as f64;
                    let mut ga = vec![0.0; t * d];
                    for row in ga.chunks_mut(d) {
                        for (g, x) in row.iter_mut().zip(&gout) {
                            *g = scale * x;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let d = self.nodes[x.0].value.cols();
                    let rows = self.nodes[x.0].value.rows();
                    let xd = self.nodes[x.0].value.data();
                    let gd = self.nodes[gamma.0].value.data();
                    let mut gx = vec![0.0; rows * d];
                    let mut ggamma = vec![0.0; d];
                    let mut gbeta = vec![0.0; d];
                    for r in 0..rows {
                        let xrow = &xd[r * d..(r + 1) * d];
                        let grow = &gout[r * d..(r + 1) * d];
                        let mean = xrow.iter().sum::<f64>() / d as f64;
                        let var = xrow.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + Self::LN_EPS).sqrt();
                        // xhat_i = (x_i - mean) * inv
                        let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                        for i in 0..d {
                            ggamma[i] += grow[i] * xhat[i];
                            gbeta[i] += grow[i];
                        }
                        // dxhat = g * gamma
                        let dxhat: Vec<f64> = grow.iter().zip(gd).map(|(g, gm)| g * gm).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for i in 0..d {
                            gx[r * d + i] =
                                inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[gamma.0], ggamma);
                    accumulate(&mut grads[beta.0], gbeta);
                }
                Op::Attention { q, k, v, heads } => {
                    let t = self.nodes[q.0].value.rows();
                    let d = self.nodes[q.0].value.cols();
                    let (gq, gk, gv) = attention_backward(
                        self.nodes[q.0].value.data(),
                        self.nodes[k.0].value.data(),
                        self.nodes[v.0].value.data(),
                        &gout,
                        t,
                        d,
                        *heads,
                    );
                    accumulate(&mut grads[q.0], gq);
                    accumulate(&mut grads[k.0], gk);
                    accumulate(&mut grads[v.0], gv);
                }
                Op::Bce { pred, targets } => {
                    let m = targets.len() as f64;
                    let g0 = gout[0];
                    let gp: Vec<f64> = self.nodes[pred.0]
                        .value
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| {
                            let p = clamp_prob(p);
                            g0 * (p - y) / (p * (1.0 - p) * m)
                        })
                        .collect();
                    accumulate(&mut grads[pred.0], gp);
                }
                Op::Cce { probs, targets } => {
                    let n = self.nodes[probs.0].value.cols();
                    let m = targets.len() as f64;
                    let g0 = gout[0];
                    let data = self.nodes[probs.0].value.data();
                    let mut gp = vec![0.0; data.len()];
                    for (r, &y) in targets.iter().enumerate() {
                        let p = clamp_prob(data[r * n + y]);
                        gp[r * n + y] = -g0 / (p * m);
                    }
                    accumulate(&mut grads[probs.0], gp);
                }
            }
        }

        let mut entries = Vec::with_capacity(self.params.len());
        for &pid in &self.params {
            let Op::Param { name } = &self.nodes[pid.0].op else { unreachable!() };
            let shape = self.nodes[pid.0].value.shape().to_vec();
            let tensor = match grads[pid.0].take() {
                Some(data) => Tensor::new(shape, data)?,
                None => Tensor::zeros(shape),
            };
            entries.push((name.clone(), tensor));
        }
        Ok(GradientMap { entries, loss_value })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(1e-300, 1.0 - 1e-16)
}

fn attention_forward(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        let weights = attention_weights(q, k, t, d, off, dh, scale);
        for i in 0..t {
            for j in 0..t {
                let w = weights[i * t + j];
                for c in 0..dh {
                    out[i * d + off + c] += w * v[j * d + off + c];
                }
            }
        }
    }
    out
}

/// Row-softmax of the scaled score matrix for one head.
fn attention_weights(
    q: &[f64],
    k: &[f64],
    t: usize,
    d: usize,
    off: usize,
    dh: usize,
    scale: f64,
) -> Vec<f64> {
    let mut w = vec![0.0; t * t];
    for i in 0..t {
        for j in 0..t {
            let mut s = 0.0;
            for c in 0..dh {
                s += q[i * d + off + c] * k[j * d + off + c];
            }
            w[i * t + j] = s * scale;
        }
        let row = &mut w[i * t..(i + 1) * t];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    w
}

fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    gout: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; t * d];
    let mut gk = vec![0.0; t * d];
    let mut gv = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        let weights = attention_weights(q, k, t, d, off, dh, scale);
        // dV[j] += sum_i w[i,j] * gout[i]
        for i in 0..t {
            for j in 0..t {
                let w = weights[i * t + j];
                for c in 0..dh {
                    gv[j * d + off + c] += w * gout[i * d + off + c];
                }
            }
        }
        // dW[i,j] = gout[i] . V[j], then softmax backward over row i.
        let mut gw = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                let mut s = 0.0;
                for c in 0..dh {
                    s += gout[i * d + off + c] * v[j * d + off + c];
                }
                gw[i * t + j] = s;
            }
            let wrow = &weights[i * t..(i + 1) * t];
            let grow = &mut gw[i * t..(i + 1) * t];
            let dot: f64 = grow.iter().zip(wrow).map(|(g, w)| g * w).sum();
            for (g, w) in grow.iter_mut().zip(wrow) {
                *g = w * (*g - dot) * scale;
            }
        }
        // dQ[i] += sum_j gS[i,j] K[j];  dK[j] += sum_i gS[i,j] Q[i]
        for i in 0..t {
            for j in 0..t {
                let gs = gw[i * t + j];
                for c in 0..dh {
                    gq[i * d + off + c] += gs * k[j * d + off + c];
                    gk[j * d + off + c] += gs * q[i * d + off + c];
                }
            }
        }
    }
    (gq, gk, gv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParameterSet;

    /// Central-difference gradient oracle: rebuilds the graph with each
    /// parameter entry perturbed by +/- eps and compares the slope of the
    /// loss against the backward pass.
    fn assert_matches_finite_difference<F>(params: &ParameterSet, build: F, tol: f64)
    where
        F: Fn(&mut Graph, &ParameterSet) -> NodeId,
    {
        let loss_at = |p: &ParameterSet| -> f64 {
            let mut g = Graph::new();
            let loss = build(&mut g, p);
            g.value(loss).data()[0]
        };
        let mut g = Graph::new();
        let loss = build(&mut g, params);
        let grads = g.backward(loss).unwrap();

        let eps = 1e-6;
        for entry in params.entries() {
            let analytic = grads.get(&entry.name).unwrap();
            for i in 0..entry.tensor.len() {
                let mut plus = params.clone();
                plus.get_mut(&entry.name).unwrap().data_mut()[i] += eps;
                let mut minus = params.clone();
                minus.get_mut(&entry.name).unwrap().data_mut()[i] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                let got = analytic.data()[i];
                assert!(
                    (got - numeric).abs() <= tol * (1.0 + numeric.abs()),
                    "{}[{}]: backward {} vs finite-difference {}",
                    entry.name,
                    i,
                    got,
                    numeric
                );
            }
        }
    }

    fn params_from(pairs: &[(&str, Vec<usize>, Vec<f64>)]) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (name, shape, data) in pairs {
            p.push(name, Tensor::new(shape.clone(), data.clone()).unwrap(), true).unwrap();
        }
        p
    }

    #[test]
    fn identity_loss_has_unit_gradient() {
        let params = params_from(&[("w", vec![1, 1], vec![4.0])]);
        let mut g = Graph::new();
        let w = g.param("w", params.get("w").unwrap());
        let grads = g.backward(w).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0]);
        assert_eq!(grads.loss_value(), 4.0);
    }

    #[test]
    fn square_loss_gradient_is_two_w() {
        // loss = w * w at w = 3 -> dloss/dw = 6.
        let params = params_from(&[("w", vec![1, 1], vec![3.0])]);
        let mut g = Graph::new();
        let w = g.param("w", params.get("w").unwrap());
        let loss = g.matmul(w, w).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[6.0]);
        assert_eq!(grads.loss_value(), 9.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform_and_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![0.0, 0.0, 5.0, -3.0]).unwrap());
        let s = g.softmax(x);
        let out = g.value(s).data();
        assert_eq!(&out[..2], &[0.5, 0.5]);
        assert!((out[2] + out[3] - 1.0).abs() < 1e-15);
        assert!(out[2] > 0.99);
    }

    #[test]
    fn softmax_is_shift_invariant_for_large_logits() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![1000.0, 1001.0]).unwrap());
        let s = g.softmax(x);
        let out = g.value(s).data();
        assert!(out.iter().all(|p| p.is_finite()));
        assert!((out[0] + out[1] - 1.0).abs() < 1e-15);
        assert!((out[1] / out[0] - std::f64::consts::E).abs() < 1e-10);
    }

    #[test]
    fn bce_gradient_matches_analytic_form() {
        // dL/dp_i = -(y/p - (1-y)/(1-p)) / m on the raw probabilities.
        let params = params_from(&[("p", vec![2, 1], vec![0.5, 0.5])]);
        let mut g = Graph::new();
        let p = g.param("p", params.get("p").unwrap());
        let loss = g.binary_cross_entropy(p, &[1.0, 0.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[-1.0, 1.0]);
        assert!((grads.loss_value() - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn dense_relu_sigmoid_bce_chain_matches_finite_difference() {
        let params = params_from(&[
            ("w1", vec![3, 4], (0..12).map(|i| 0.3 * (i as f64) - 1.7).collect()),
            ("b1", vec![4], vec![0.1, -0.2, 0.05, 0.4]),
            ("w2", vec![4, 1], vec![0.7, -0.3, 0.9, 0.2]),
            ("b2", vec![1], vec![-0.1]),
        ]);
        assert_matches_finite_difference(
            &params,
            |g, p| {
                let x = g.input(
                    Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7]).unwrap(),
                );
                let w1 = g.param("w1", p.get("w1").unwrap());
                let b1 = g.param("b1", p.get("b1").unwrap());
                let w2 = g.param("w2", p.get("w2").unwrap());
                let b2 = g.param("b2", p.get("b2").unwrap());
                let h = g.matmul(x, w1).unwrap();
                let h = g.add_row(h, b1).unwrap();
                let h = g.relu(h);
                let o = g.matmul(h, w2).unwrap();
                let o = g.add_row(o, b2).unwrap();
                let o = g.sigmoid(o);
                g.binary_cross_entropy(o, &[1.0, 0.0]).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_cce_matches_finite_difference() {
        let params = params_from(&[
            ("w", vec![3, 3], vec![0.2, -0.5, 0.8, 1.1, 0.0, -0.3, 0.4, 0.9, -1.2]),
            ("b", vec![3], vec![0.05, -0.15, 0.25]),
        ]);
        assert_matches_finite_difference(
            &params,
            |g, p| {
                let x = g.input(
                    Tensor::new(vec![2, 3], vec![1.0, 0.5, -0.5, -1.5, 2.0, 0.1]).unwrap(),
                );
                let w = g.param("w", p.get("w").unwrap());
                let b = g.param("b", p.get("b").unwrap());
                let z = g.matmul(x, w).unwrap();
                let z = g.add_row(z, b).unwrap();
                let s = g.softmax(z);
                g.categorical_cross_entropy(s, &[2, 0]).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn embedding_mean_pool_matches_finite_difference() {
        let params = params_from(&[(
            "emb",
            vec![5, 3],
            (0..15).map(|i| 0.1 * (i as f64) - 0.6).collect(),
        )]);
        // Token 3 repeats: its gradient rows must accumulate.
        assert_matches_finite_difference(
            &params,
            |g, p| {
                let emb = g.param("emb", p.get("emb").unwrap());
                let e = g.embedding_lookup(emb, &[3, 1, 3, 4]).unwrap();
                let pooled = g.mean_pool(e).unwrap();
                let proj = g.input(Tensor::new(vec![3, 1], vec![0.4, -0.9, 0.6]).unwrap());
                let z = g.matmul(pooled, proj).unwrap();
                let s = g.sigmoid(z);
                g.binary_cross_entropy(s, &[1.0]).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn layer_norm_matches_finite_difference() {
        let params = params_from(&[
            ("x", vec![2, 4], vec![0.5, -1.2, 2.0, 0.3, -0.7, 1.4, 0.9, -2.1]),
            ("gamma", vec![4], vec![1.0, 0.8, 1.2, 0.9]),
            ("beta", vec![4], vec![0.0, 0.1, -0.1, 0.2]),
        ]);
        assert_matches_finite_difference(
            &params,
            |g, p| {
                let x = g.param("x", p.get("x").unwrap());
                let gamma = g.param("gamma", p.get("gamma").unwrap());
                let beta = g.param("beta", p.get("beta").unwrap());
                let n = g.layer_norm(x, gamma, beta).unwrap();
                let s = g.sigmoid(n);
                let pooled = g.mean_pool(s).unwrap();
                let proj = g.input(Tensor::new(vec![4, 1], vec![0.5, -0.3, 0.8, 0.2]).unwrap());
                let z = g.matmul(pooled, proj).unwrap();
                let s2 = g.sigmoid(z);
                g.binary_cross_entropy(s2, &[1.0]).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn attention_matches_finite_difference() {
        let params = params_from(&[
            ("q", vec![3, 4], (0..12).map(|i| 0.17 * (i as f64) - 0.9).collect()),
            ("k", vec![3, 4], (0..12).map(|i| -0.13 * (i as f64) + 0.7).collect()),
            ("v", vec![3, 4], (0..12).map(|i| 0.21 * (i as f64) - 1.1).collect()),
        ]);
        for heads in [1usize, 2] {
            assert_matches_finite_difference(
                &params,
                |g, p| {
                    let q = g.param("q", p.get("q").unwrap());
                    let k = g.param("k", p.get("k").unwrap());
                    let v = g.param("v", p.get("v").unwrap());
                    let a = g.scaled_dot_attention(q, k, v, heads).unwrap();
                    let s = g.sigmoid(a);
                    let pooled = g.mean_pool(s).unwrap();
                    let proj =
                        g.input(Tensor::new(vec![4, 1], vec![0.5, -0.3, 0.8, 0.2]).unwrap());
                    let z = g.matmul(pooled, proj).unwrap();
                    let s2 = g.sigmoid(z);
                    g.binary_cross_entropy(s2, &[0.0]).unwrap()
                },
                1e-5,
            );
        }
    }

    #[test]
    fn attention_over_one_position_returns_the_value_row() {
        let mut g = Graph::new();
        let q = g.input(Tensor::new(vec![1, 2], vec![0.3, -0.8]).unwrap());
        let k = g.input(Tensor::new(vec![1, 2], vec![1.5, 0.2]).unwrap());
        let v = g.input(Tensor::new(vec![1, 2], vec![42.0, -7.0]).unwrap());
        let a = g.scaled_dot_attention(q, k, v, 1).unwrap();
        assert_eq!(g.value(a).data(), &[42.0, -7.0]);
    }

    #[test]
    fn backward_consumes_the_tape() {
        let params = params_from(&[("w", vec![1, 1], vec![2.0])]);
        let mut g = Graph::new();
        let w = g.param("w", params.get("w").unwrap());
        let loss = g.matmul(w, w).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(AutodiffError::StaleGraph)));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap());
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn unused_parameters_get_zero_gradients_in_registration_order() {
        let params = params_from(&[
            ("a", vec![1, 1], vec![1.0]),
            ("b", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
        ]);
        let mut g = Graph::new();
        let a = g.param("a", params.get("a").unwrap());
        let _b = g.param("b", params.get("b").unwrap());
        let loss = g.matmul(a, a).unwrap();
        let grads = g.backward(loss).unwrap();
        let names: Vec<&str> = grads.entries().iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(grads.get("b").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn gradient_map_mean_averages_entrywise() {
        let make = |x: f64| {
            let params = params_from(&[("w", vec![1, 1], vec![x])]);
            let mut g = Graph::new();
            let w = g.param("w", params.get("w").unwrap());
            let loss = g.matmul(w, w).unwrap();
            g.backward(loss).unwrap()
        };
        let mean = GradientMap::mean(&[make(1.0), make(3.0)]).unwrap();
        // Gradients 2 and 6 average to 4; losses 1 and 9 to 5.
        assert_eq!(mean.get("w").unwrap().data(), &[4.0]);
        assert_eq!(mean.loss_value(), 5.0);
    }
}
