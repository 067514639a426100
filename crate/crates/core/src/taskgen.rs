//! Seeded synthetic tasks with known answers and exact-match verification.
//!
//! Chain arithmetic queries look like `3 + 4 - 2 =`; the running totals are the
//! reference steps and the final total is the answer. Recall queries look like
//! `K2 =` and are answered from a fixed key-to-digit table.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::seqmodel::{TokenId, Vocabulary};

const MAX_TOTAL: i64 = 99;
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ChainArith,
    Recall,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub tokens: Vec<TokenId>,
    /// Ground-truth answer as canonical decimal digit tokens.
    #[serde(rename = "y")]
    pub answer: Vec<TokenId>,
    pub reference_steps: Vec<Vec<TokenId>>,
    pub kind: TaskKind,
    pub seed: u64,
}

/// Draws a chain query with all running totals in `[0, 99]`.
///
/// Operators and operands are resampled as a whole until the chain stays in
/// range; after 100 failed attempts generation fails.
pub fn gen_chain_query<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &Vocabulary,
    num_ops: usize,
    operand_range: (u32, u32),
) -> Result<Query> {
    gen_chain_query_with(rng, vocab, num_ops, operand_range, Operators::PlusMinus)
}

/// Operators a chain query may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operators {
    #[default]
    PlusMinus,
    Plus,
    Minus,
}

/// [`gen_chain_query`] restricted to `ops`.
pub fn gen_chain_query_with<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &Vocabulary,
    num_ops: usize,
    operand_range: (u32, u32),
    ops: Operators,
) -> Result<Query> {
    let (lo, hi) = operand_range;
    if num_ops == 0 {
        return Err(Error::Config("chain queries need at least one operation".into()));
    }
    if lo > hi || hi > 9 {
        return Err(Error::Config(format!("operand range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 9")));
    }
    let sym = |s: &str| vocab.id(s).ok_or_else(|| Error::Config(format!("vocabulary lacks {s:?}")));
    let (plus, minus, equals) = (sym("+")?, sym("-")?, sym("=")?);

    for _ in 0..MAX_ATTEMPTS {
        let first = rng.random_range(lo..=hi);
        let mut total = first as i64;
        let mut tokens = vocab.render_number(first);
        let mut steps = Vec::with_capacity(num_ops);
        let mut ok = true;
        for _ in 0..num_ops {
            let add = match ops {
                Operators::PlusMinus => rng.random_bool(0.5),
                Operators::Plus => true,
                Operators::Minus => false,
            };
            let x = rng.random_range(lo..=hi);
            tokens.push(if add { plus } else { minus });
            tokens.extend(vocab.render_number(x));
            total += if add { x as i64 } else { -(x as i64) };
            if !(0..=MAX_TOTAL).contains(&total) {
                ok = false;
                break;
            }
            steps.push(vocab.render_number(total as u32));
        }
        if ok {
            tokens.push(equals);
            return Ok(Query {
                id: 0,
                tokens,
                answer: vocab.render_number(total as u32),
                reference_steps: steps,
                kind: TaskKind::ChainArith,
                seed: 0,
            });
        }
    }
    Err(Error::Generation(format!(
        "no in-range chain after {MAX_ATTEMPTS} attempts (num_ops={num_ops}, range=[{lo}, {hi}])"
    )))
}

/// Fixed key-to-digit lookup table shared by all recall queries of a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallTable {
    pub values: Vec<u32>,
}

impl RecallTable {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, table_size: usize) -> Result<Self> {
        if table_size < 2 {
            return Err(Error::Config(format!("recall table needs at least 2 keys, got {table_size}")));
        }
        Ok(Self { values: (0..table_size).map(|_| rng.random_range(0..10)).collect() })
    }
}

/// Draws a key uniformly; the answer is the table value and there are no reference steps.
pub fn gen_recall_query<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocabulary, table: &RecallTable) -> Result<Query> {
    let key = rng.random_range(0..table.values.len());
    let key_tok = vocab
        .id(&format!("K{key}"))
        .ok_or_else(|| Error::Config(format!("vocabulary lacks key token K{key}")))?;
    let equals = vocab.id("=").ok_or_else(|| Error::Config("vocabulary lacks \"=\"".into()))?;
    Ok(Query {
        id: 0,
        tokens: vec![key_tok, equals],
        answer: vocab.render_number(table.values[key]),
        reference_steps: Vec::new(),
        kind: TaskKind::Recall,
        seed: 0,
    })
}

/// 1 iff `answer` equals the ground truth token for token.
pub fn verify_answer(answer: &[TokenId], query: &Query) -> u8 {
    u8::from(!answer.is_empty() && answer == query.answer.as_slice())
}

/// Task family and parameters, as written in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    ChainArith {
        num_ops: usize,
        operand_range: (u32, u32),
        #[serde(default)]
        operators: Operators,
    },
    Recall { table_size: usize, table_seed: u64 },
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::ChainArith { num_ops: 2, operand_range: (0, 4), operators: Operators::PlusMinus }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskSpec::ChainArith { num_ops, operand_range: (lo, hi), .. } => {
                if num_ops == 0 || lo > hi || hi > 9 {
                    return Err(Error::Config(format!(
                        "invalid chain task: num_ops={num_ops}, operand_range=[{lo}, {hi}]"
                    )));
                }
            }
            TaskSpec::Recall { table_size, .. } => {
                if !(2..=10).contains(&table_size) {
                    return Err(Error::Config(format!("recall table_size must be in [2, 10], got {table_size}")));
                }
            }
        }
        Ok(())
    }
}

/// Produces queries as a pure function of `(spec, query seed)`.
#[derive(Clone, Debug)]
pub struct TaskGenerator {
    spec: TaskSpec,
    vocab: Vocabulary,
    table: Option<RecallTable>,
}

impl TaskGenerator {
    pub fn new(spec: TaskSpec, vocab: Vocabulary) -> Result<Self> {
        spec.validate()?;
        let table = match spec {
            TaskSpec::Recall { table_size, table_seed } => {
                Some(RecallTable::generate(&mut seeding::stream(&[table_seed]), table_size)?)
            }
            TaskSpec::ChainArith { .. } => None,
        };
        Ok(Self { spec, vocab, table })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn recall_table(&self) -> Option<&RecallTable> {
        self.table.as_ref()
    }

    pub fn query(&self, id: u64, seed: u64) -> Result<Query> {
        let mut rng = seeding::stream(&[seed]);
        let mut q = match (&self.spec, &self.table) {
            (TaskSpec::ChainArith { num_ops, operand_range, operators }, _) => {
                gen_chain_query_with(&mut rng, &self.vocab, *num_ops, *operand_range, *operators)?
            }
            (TaskSpec::Recall { .. }, Some(table)) => gen_recall_query(&mut rng, &self.vocab, table)?,
            (TaskSpec::Recall { .. }, None) => unreachable!("recall generator always carries a table"),
        };
        q.id = id;
        q.seed = seed;
        Ok(q)
    }

    /// `count` queries whose seeds derive from `base_seed` and the query index.
    pub fn generate_set(&self, base_seed: u64, count: usize) -> Result<Vec<Query>> {
        (0..count as u64)
            .map(|i| self.query(i, seeding::derive_seed(&[base_seed, i])))
            .collect()
    }
}

/// Writes one query per line.
pub fn write_manifest(path: &Path, queries: &[Query]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<Query>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("task manifest"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::standard(10)
    }

    fn evaluate_chain(v: &Vocabulary, q: &Query) -> (Vec<u32>, u32) {
        // Parse `n (op n)* =` with exact integer arithmetic.
        let text = v.decode(&q.tokens);
        let syms: Vec<&str> = text.split_whitespace().collect();
        let mut totals = Vec::new();
        let mut total: i64 = syms[0].parse().unwrap();
        let mut i = 1;
        while syms[i] != "=" {
            let x: i64 = syms[i + 1].parse().unwrap();
            total = if syms[i] == "+" { total + x } else { total - x };
            totals.push(total as u32);
            i += 2;
        }
        (totals, total as u32)
    }

    #[test]
    fn chain_query_structure() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = gen_chain_query(&mut rng, &v, 2, (0, 9)).unwrap();
            assert_eq!(q.reference_steps.len(), 2);
            assert_eq!(q.reference_steps.last().unwrap(), &q.answer);
            assert_eq!(verify_answer(&q.answer.clone(), &q), 1);
            assert_eq!(q.tokens.len(), 6);
        }
    }

    #[test]
    fn two_digit_rendering() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen_sum = false;
        for _ in 0..20 {
            let q = gen_chain_query(&mut rng, &v, 1, (9, 9)).unwrap();
            if v.decode(&q.tokens) == "9 + 9 =" {
                seen_sum = true;
                assert_eq!(v.decode(&q.answer), "1 8");
                assert_eq!(q.reference_steps, vec![v.encode("1 8").unwrap()]);
            } else {
                assert_eq!(v.decode(&q.answer), "0");
            }
        }
        assert!(seen_sum);
    }

    #[test]
    fn reference_steps_reproduce_answer() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..10_000 {
            let q = gen_chain_query(&mut rng, &v, 1 + i % 5, (0, 9)).unwrap();
            let (totals, answer) = evaluate_chain(&v, &q);
            let rendered: Vec<Vec<TokenId>> = totals.iter().map(|&t| v.render_number(t)).collect();
            assert_eq!(rendered, q.reference_steps);
            assert_eq!(v.render_number(answer), q.answer);
            assert!(totals.iter().all(|&t| t <= 99));
        }
    }

    #[test]
    fn operator_restriction() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (plus, minus) = (v.id("+").unwrap(), v.id("-").unwrap());
        for _ in 0..500 {
            let q = gen_chain_query_with(&mut rng, &v, 2, (0, 3), Operators::Plus).unwrap();
            assert!(!q.tokens.contains(&minus));
            let (_, answer) = evaluate_chain(&v, &q);
            assert!(answer <= 9);
            let q = gen_chain_query_with(&mut rng, &v, 2, (0, 9), Operators::Minus).unwrap();
            assert!(!q.tokens.contains(&plus));
        }
        let spec: TaskSpec = serde_json::from_str(r#"{"kind":"chain_arith","num_ops":2,"operand_range":[0,4]}"#).unwrap();
        assert_eq!(spec, TaskSpec::default());
    }

    #[test]
    fn chain_rejects_bad_ranges() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(gen_chain_query(&mut rng, &v, 2, (5, 3)), Err(Error::Config(_))));
        assert!(matches!(gen_chain_query(&mut rng, &v, 2, (0, 12)), Err(Error::Config(_))));
        assert!(matches!(gen_chain_query(&mut rng, &v, 0, (0, 9)), Err(Error::Config(_))));
    }

    #[test]
    fn long_chains_can_exhaust_attempts() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = gen_chain_query(&mut rng, &v, 400, (9, 9)).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn recall_queries() {
        let v = vocab();
        let table = RecallTable { values: vec![0, 4, 7] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let q = gen_recall_query(&mut rng, &v, &table).unwrap();
            assert!(q.reference_steps.is_empty());
            let key: usize = v.token(q.tokens[0]).unwrap()[1..].parse().unwrap();
            assert_eq!(q.answer, v.render_number(table.values[key]));
            if key == 2 {
                assert_eq!(v.decode(&q.tokens), "K2 =");
                assert_eq!(v.decode(&q.answer), "7");
            }
        }
    }

    #[test]
    fn verification_is_token_exact() {
        let v = vocab();
        let q = Query {
            id: 0,
            tokens: v.encode("3 + 4 - 2 =").unwrap(),
            answer: v.encode("5").unwrap(),
            reference_steps: vec![v.encode("7").unwrap(), v.encode("5").unwrap()],
            kind: TaskKind::ChainArith,
            seed: 0,
        };
        assert_eq!(verify_answer(&v.encode("5").unwrap(), &q), 1);
        assert_eq!(verify_answer(&v.encode("0 5").unwrap(), &q), 0);
        assert_eq!(verify_answer(&[], &q), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        for spec in [
            TaskSpec::ChainArith { num_ops: 3, operand_range: (0, 9), operators: Operators::PlusMinus },
            TaskSpec::Recall { table_size: 6, table_seed: 4 },
        ] {
            let a = TaskGenerator::new(spec.clone(), vocab()).unwrap();
            let b = TaskGenerator::new(spec, vocab()).unwrap();
            assert_eq!(a.recall_table(), b.recall_table());
            assert_eq!(a.generate_set(9, 50).unwrap(), b.generate_set(9, 50).unwrap());
            assert_ne!(a.generate_set(9, 50).unwrap(), a.generate_set(10, 50).unwrap());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let g = TaskGenerator::new(TaskSpec::default(), vocab()).unwrap();
        let qs = g.generate_set(3, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        write_manifest(&path, &qs).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), qs);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.lines().next().unwrap().contains("\"kind\":\"chain_arith\""));
    }
}
