//! Signature-based seed mining and the seeded mapping solvers.
//!
//! Seeds pair source and target APIs whose case-folded `Class.method`
//! suffixes coincide (`java.lang.String.equals` ↔ `System.String.Equals`).
//! The initial mapping is the orthogonal Procrustes solution `W = UVᵀ`
//! where `UΣVᵀ` is the SVD of `Σ yᵢxᵢᵀ`. An unconstrained gradient-descent
//! solver is kept as a baseline.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::corpus::Vocabulary;
use crate::embedding::{normalize_rows, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::linalg::orthogonality_error;

/// Ordered list of `(source, target)` token pairs without duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedDictionary {
    pairs: Vec<(String, String)>,
    seen: HashSet<(String, String)>,
}

impl SeedDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a pair; returns false if it was already present.
    pub fn push(&mut self, source: impl Into<String>, target: impl Into<String>) -> bool {
        let pair = (source.into(), target.into());
        if self.seen.contains(&pair) {
            return false;
        }
        self.seen.insert(pair.clone());
        self.pairs.push(pair);
        true
    }

    pub fn contains(&self, source: &str, target: &str) -> bool {
        self.seen.contains(&(source.to_owned(), target.to_owned()))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(s, t)| (s.as_str(), t.as_str()))
    }

    pub fn read_tsv<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut dict = SeedDictionary::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            match cols.as_slice() {
                [s, t] if !s.is_empty() && !t.is_empty() => {
                    dict.push(*s, *t);
                }
                _ => {
                    return Err(Error::format(
                        name,
                        i + 1,
                        "expected `source_token<TAB>target_token`",
                    ))
                }
            }
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f), &path.display().to_string())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (s, t) in &self.pairs {
            writeln!(w, "{s}\t{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_tsv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

impl FromIterator<(String, String)> for SeedDictionary {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut d = SeedDictionary::new();
        for (s, t) in iter {
            d.push(s, t);
        }
        d
    }
}

/// Which pipeline step produced a mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Random or identity initialization, no alignment step applied.
    Initial,
    Seeded,
    Adversarial,
    Refined,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Initial => "initial",
            Stage::Seeded => "seeded",
            Stage::Adversarial => "adversarial",
            Stage::Refined => "refined",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "initial" => Ok(Stage::Initial),
            "seeded" => Ok(Stage::Seeded),
            "adversarial" => Ok(Stage::Adversarial),
            "refined" => Ok(Stage::Refined),
            other => Err(Error::InvalidInput(format!("unknown stage `{other}`"))),
        }
    }
}

/// A `d × d` linear map carrying source vectors into the target space.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix {
    matrix: DMatrix<f64>,
    stage: Stage,
    orthogonal: bool,
}

impl MappingMatrix {
    pub fn new(matrix: DMatrix<f64>, stage: Stage) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput(format!(
                "mapping must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapping matrix".into()));
        }
        let orthogonal = orthogonality_error(&matrix) < 1e-6;
        Ok(MappingMatrix {
            matrix,
            stage,
            orthogonal,
        })
    }

    pub fn identity(d: usize) -> Self {
        MappingMatrix {
            matrix: DMatrix::identity(d, d),
            stage: Stage::Initial,
            orthogonal: true,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.dim())?;
        writeln!(w, "# stage: {}", self.stage)?;
        for row in self.matrix.row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut dim = None;
        let mut stage = Stage::Initial;
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(name, e))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(comment) = t.strip_prefix('#') {
                if let Some(s) = comment.trim().strip_prefix("stage:") {
                    stage = s
                        .parse()
                        .map_err(|e: Error| Error::format(name, line_no, e.to_string()))?;
                }
                continue;
            }
            match dim {
                None => {
                    let d: usize = t
                        .parse()
                        .map_err(|_| Error::format(name, line_no, "malformed header"))?;
                    if d == 0 {
                        return Err(Error::format(name, line_no, "dimension must be positive"));
                    }
                    dim = Some(d);
                }
                Some(d) => {
                    let before = data.len();
                    for p in t.split_whitespace() {
                        let v: f64 = p.parse().map_err(|_| {
                            Error::format(name, line_no, format!("invalid number `{p}`"))
                        })?;
                        data.push(v);
                    }
                    if data.len() - before != d {
                        return Err(Error::format(
                            name,
                            line_no,
                            format!("dimension mismatch: expected {d} values"),
                        ));
                    }
                    rows += 1;
                }
            }
        }
        let d = dim.ok_or_else(|| Error::format(name, 1, "malformed header: empty file"))?;
        if rows != d {
            return Err(Error::RowCountMismatch {
                expected: d,
                actual: rows,
            });
        }
        MappingMatrix::new(DMatrix::from_row_slice(d, d, &data), stage)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f), &path.display().to_string())
    }
}

/// Case-folded `Class.method` key of a qualified signature; `None` for
/// tokens without a dot (keywords, AST labels).
pub fn signature_key(token: &str) -> Option<String> {
    let mut it = token.rsplitn(3, '.');
    let method = it.next()?;
    let class = it.next()?;
    if method.is_empty() || class.is_empty() {
        return None;
    }
    Some(format!("{}.{}", class.to_lowercase(), method.to_lowercase()))
}

fn unique_keys(vocab: &Vocabulary) -> HashMap<String, Option<usize>> {
    let mut keys: HashMap<String, Option<usize>> = HashMap::new();
    for (i, t) in vocab.tokens().iter().enumerate() {
        if let Some(k) = signature_key(t) {
            keys.entry(k)
                .and_modify(|slot| *slot = None)
                .or_insert(Some(i));
        }
    }
    keys
}

/// Pairs every source signature with the target signature sharing its
/// case-folded `Class.method` suffix, provided the key is unique in both
/// vocabularies. Pairs come out in source frequency order.
pub fn mine_signature_seeds(src: &Vocabulary, tgt: &Vocabulary) -> SeedDictionary {
    let src_keys = unique_keys(src);
    let tgt_keys = unique_keys(tgt);
    let mut matches: Vec<(usize, usize)> = src_keys
        .iter()
        .filter_map(|(k, s)| match (s, tgt_keys.get(k)) {
            (Some(s), Some(Some(t))) => Some((*s, *t)),
            _ => None,
        })
        .collect();
    matches.sort_unstable();
    matches
        .into_iter()
        .map(|(s, t)| (src.token(s).to_owned(), tgt.token(t).to_owned()))
        .collect()
}

/// Solves `argmin_W ‖W X − Y‖_F` over orthogonal `W`.
///
/// `xs` and `ys` hold one seed pair per row (`|S| × d`). The result is
/// `W = UVᵀ` from the SVD `UΣVᵀ = Σᵢ yᵢ xᵢᵀ`, with each left singular vector
/// sign-normalized so its first non-zero entry is positive.
pub fn solve_procrustes(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<MappingMatrix> {
    check_seed_shapes(xs, ys)?;
    let cross = ys.transpose() * xs;
    let svd = cross.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested Vᵀ");
    for j in 0..u.ncols() {
        let first = u.column(j).iter().copied().find(|v| v.abs() > 1e-12);
        if first.is_some_and(|v| v < 0.0) {
            u.column_mut(j).neg_mut();
            v_t.row_mut(j).neg_mut();
        }
    }
    MappingMatrix::new(u * v_t, Stage::Seeded)
}

fn check_seed_shapes(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<()> {
    if xs.nrows() == 0 {
        return Err(Error::InvalidInput("at least one seed pair is required".into()));
    }
    if xs.shape() != ys.shape() {
        return Err(Error::InvalidInput(format!(
            "seed matrices differ in shape: {:?} vs {:?}",
            xs.shape(),
            ys.shape()
        )));
    }
    Ok(())
}

/// `‖W X − Y‖_F` with seeds as rows.
pub fn seed_residual(w: &DMatrix<f64>, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> f64 {
    (xs * w.transpose() - ys).norm()
}

const DIVERGENCE_PATIENCE: usize = 10;

/// Unconstrained least-squares fit of `W` by full-batch gradient descent on
/// `½‖W X − Y‖²_F`, starting from the zero matrix. Returns the mapping and
/// the loss before each update.
pub fn solve_gradient_descent_traced(
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    lr: f64,
    iters: usize,
) -> Result<(MappingMatrix, Vec<f64>)> {
    check_seed_shapes(xs, ys)?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config("learning rate must be > 0".into()));
    }
    let d = xs.ncols();
    let mut w = DMatrix::<f64>::zeros(d, d);
    let mut losses = Vec::with_capacity(iters + 1);
    let mut increases = 0;
    for _ in 0..iters {
        let err = xs * w.transpose() - ys;
        let loss = 0.5 * err.norm_squared();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                last_loss: losses.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        if losses.last().is_some_and(|&prev| loss > prev) {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged { last_loss: loss });
            }
        } else {
            increases = 0;
        }
        losses.push(loss);
        let grad = err.transpose() * xs;
        w -= lr * grad;
    }
    losses.push(0.5 * (xs * w.transpose() - ys).norm_squared());
    Ok((MappingMatrix::new(w, Stage::Seeded)?, losses))
}

pub fn solve_gradient_descent(
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    lr: f64,
    iters: usize,
) -> Result<MappingMatrix> {
    solve_gradient_descent_traced(xs, ys, lr, iters).map(|(w, _)| w)
}

/// Unit-normalized seed rows for the pairs of `dict` present in both
/// spaces. Pairs with an out-of-vocabulary side are skipped.
pub fn seed_matrices(
    dict: &SeedDictionary,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            actual: tgt.dim(),
        });
    }
    let (si, ti): (Vec<usize>, Vec<usize>) = dict
        .iter()
        .filter_map(|(s, t)| Some((src.vocab().index(s)?, tgt.vocab().index(t)?)))
        .unzip();
    let skipped = dict.len() - si.len();
    if skipped > 0 {
        log::warn!("{skipped} seed pairs skipped: token missing from an embedding space");
    }
    Ok((normalize_rows(&src.rows(&si)), normalize_rows(&tgt.rows(&ti))))
}

/// The seeding step: Procrustes over the dictionary's unit-normalized rows.
pub fn seed_mapping(
    dict: &SeedDictionary,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
) -> Result<MappingMatrix> {
    let (xs, ys) = seed_matrices(dict, src, tgt)?;
    if xs.nrows() == 0 {
        return Err(Error::InvalidInput(
            "no seed pair has both tokens in the embedding spaces".into(),
        ));
    }
    solve_procrustes(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, random_orthogonal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_ordered(
            tokens.iter().map(|s| s.to_string()).collect(),
            vec![1; tokens.len()],
        )
        .unwrap()
    }

    #[test]
    fn mines_table_examples() {
        let src = vocab(&["java.lang.String.equals", "java.util.Random.nextDouble", "if"]);
        let tgt = vocab(&["System.Random.NextDouble", "System.String.Equals", "if"]);
        let seeds = mine_signature_seeds(&src, &tgt);
        assert_eq!(seeds.len(), 2);
        assert!(seeds.contains("java.lang.String.equals", "System.String.Equals"));
        assert!(seeds.contains("java.util.Random.nextDouble", "System.Random.NextDouble"));
    }

    #[test]
    fn mines_only_matching_suffix() {
        let seeds = mine_signature_seeds(&vocab(&["a.B.c", "a.B.d"]), &vocab(&["z.B.c"]));
        assert_eq!(seeds.pairs(), &[("a.B.c".to_string(), "z.B.c".to_string())]);
    }

    #[test]
    fn ambiguous_keys_are_discarded() {
        let seeds = mine_signature_seeds(
            &vocab(&["java.util.List.add", "com.google.List.add"]),
            &vocab(&["System.List.Add"]),
        );
        assert!(seeds.is_empty());
    }

    #[test]
    fn mining_is_symmetric() {
        let a = vocab(&["p.A.x", "p.A.y", "q.B.z", "q.C.x", "kw"]);
        let b = vocab(&["r.a.X", "r.B.Z", "s.C.X", "s.D.w", "kw"]);
        let ab: HashSet<(String, String)> =
            mine_signature_seeds(&a, &b).pairs().iter().cloned().collect();
        let ba: HashSet<(String, String)> = mine_signature_seeds(&b, &a)
            .pairs()
            .iter()
            .map(|(s, t)| (t.clone(), s.clone()))
            .collect();
        assert_eq!(ab, ba);
        assert_eq!(ab.len(), 3);
    }

    #[test]
    fn procrustes_identity() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let w = solve_procrustes(&i3, &i3).unwrap();
        assert!((w.matrix() - &i3).norm() < 1e-12);
        assert!(w.is_orthogonal());
        assert_eq!(w.stage(), Stage::Seeded);
    }

    #[test]
    fn procrustes_quarter_turn() {
        // e1 -> e2, e2 -> -e1
        let xs = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let ys = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let w = solve_procrustes(&xs, &ys).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((w.matrix() - expected).norm() < 1e-12, "{}", w.matrix());
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = random_orthogonal(20, &mut rng);
        let xs = gaussian_matrix(50, 20, &mut rng);
        let ys = &xs * r.transpose();
        let w = solve_procrustes(&xs, &ys).unwrap();
        assert!((w.matrix() - &r).norm() < 1e-8);
    }

    #[test]
    fn procrustes_rank_deficient_is_still_orthogonal() {
        let xs = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let ys = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, 0.0]);
        let w = solve_procrustes(&xs, &ys).unwrap();
        assert!(orthogonality_error(w.matrix()) < 1e-6);
        let mapped = w.matrix() * xs.row(0).transpose();
        assert!((mapped - ys.row(0).transpose()).norm() < 1e-10);
        let zero = DMatrix::<f64>::zeros(3, 3);
        assert!(solve_procrustes(&zero, &zero).unwrap().is_orthogonal());
    }

    #[test]
    fn procrustes_rejects_bad_shapes() {
        let a = DMatrix::<f64>::zeros(0, 3);
        assert!(solve_procrustes(&a, &a).is_err());
        let b = DMatrix::<f64>::zeros(2, 3);
        let c = DMatrix::<f64>::zeros(2, 4);
        assert!(solve_procrustes(&b, &c).is_err());
    }

    #[test]
    fn gradient_descent_identity() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let (w, losses) = solve_gradient_descent_traced(&i2, &i2, 0.1, 1000).unwrap();
        assert!((w.matrix() - &i2).norm() < 1e-3);
        assert!(losses.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn gradient_descent_single_pair() {
        let xs = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ys = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let w = solve_gradient_descent(&xs, &ys, 0.1, 1000).unwrap();
        let mapped = w.matrix() * xs.row(0).transpose();
        assert!((mapped[0]).abs() < 1e-6 && (mapped[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_descent_detects_divergence() {
        let i2 = DMatrix::<f64>::identity(2, 2) * 10.0;
        let err = solve_gradient_descent(&i2, &i2, 1.0, 1000).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn gradient_descent_on_noisy_pairs_is_not_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 10;
        let r = random_orthogonal(d, &mut rng);
        let xs = normalize_rows(&gaussian_matrix(40, d, &mut rng));
        let ys = &xs * r.transpose() + gaussian_matrix(40, d, &mut rng) * 0.1;
        let gd = solve_gradient_descent(&xs, &ys, 0.1, 5000).unwrap();
        let pr = solve_procrustes(&xs, &ys).unwrap();
        // unconstrained least squares can only fit the seeds better
        assert!(seed_residual(gd.matrix(), &xs, &ys) <= seed_residual(pr.matrix(), &xs, &ys) + 1e-9);
        assert!(orthogonality_error(pr.matrix()) < 1e-10);
        assert!(orthogonality_error(gd.matrix()) > 1e-3);
        assert!(!gd.matrix().iter().any(|v| !v.is_finite()));
    }

    #[test]
    fn mapping_file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = MappingMatrix::new(random_orthogonal(4, &mut rng), Stage::Refined).unwrap();
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("4\n# stage: refined\n"));
        let back = MappingMatrix::read(text.as_bytes(), "w").unwrap();
        assert_eq!(back, w);

        assert!(matches!(
            MappingMatrix::read("2\n1 0\n".as_bytes(), "w"),
            Err(Error::RowCountMismatch { .. })
        ));
        assert!(MappingMatrix::read("2\n1 0 0\n0 1\n".as_bytes(), "w").is_err());
    }

    #[test]
    fn seed_file_round_trip() {
        let mut d = SeedDictionary::new();
        d.push("a.B.c", "z.B.c");
        assert!(!d.push("a.B.c", "z.B.c"));
        d.push("a.B.c", "z.B.d");
        let mut buf = Vec::new();
        d.write_tsv(&mut buf).unwrap();
        assert_eq!(SeedDictionary::read_tsv(buf.as_slice(), "s").unwrap(), d);
        assert!(SeedDictionary::read_tsv("only-one-col\n".as_bytes(), "s").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn procrustes_is_orthogonal_and_optimal(seed in any::<u64>(), d in 2usize..8, n in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs = gaussian_matrix(n, d, &mut rng);
                let ys = gaussian_matrix(n, d, &mut rng);
                let w = solve_procrustes(&xs, &ys).unwrap();
                prop_assert!(orthogonality_error(w.matrix()) < 1e-6);
                let best = seed_residual(w.matrix(), &xs, &ys);
                for _ in 0..100 {
                    let q = random_orthogonal(d, &mut rng);
                    prop_assert!(best <= seed_residual(&q, &xs, &ys) + 1e-8);
                }
            }
        }
    }
}
