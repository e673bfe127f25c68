use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// A human judgement of one answer: 1 incorrect, 2 incorrect but related,
/// 3 correct but incomplete, 4 correct and complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradedAnswer {
    pub id: String,
    #[serde(default)]
    pub answer: String,
    grade: u8,
    /// Rank of the first relevant answer, 0 if none was found.
    #[serde(default)]
    pub rank: usize,
}

impl GradedAnswer {
    pub fn new(
        id: impl Into<String>,
        answer: impl Into<String>,
        grade: u8,
        rank: usize,
    ) -> Result<Self, EvalError> {
        if !(1..=4).contains(&grade) {
            return Err(EvalError::GradeOutOfRange(grade.into()));
        }
        Ok(GradedAnswer {
            id: id.into(),
            answer: answer.into(),
            grade,
            rank,
        })
    }

    pub fn grade(&self) -> u8 {
        self.grade
    }
}

fn non_empty(graded: &[GradedAnswer]) -> Result<f64, EvalError> {
    if graded.is_empty() {
        Err(EvalError::Empty)
    } else {
        Ok(graded.len() as f64)
    }
}

/// Mean of `grade - 1`, i.e. grades mapped onto 0..=3.
pub fn average_score(graded: &[GradedAnswer]) -> Result<f64, EvalError> {
    let n = non_empty(graded)?;
    Ok(graded.iter().map(|g| f64::from(g.grade - 1)).sum::<f64>() / n)
}

/// Fraction of answers graded `i` or better on the 1..=4 scale.
pub fn succ_at(graded: &[GradedAnswer], i: u8) -> Result<f64, EvalError> {
    if !(2..=4).contains(&i) {
        return Err(EvalError::Threshold(i));
    }
    let n = non_empty(graded)?;
    Ok(graded.iter().filter(|g| g.grade >= i).count() as f64 / n)
}

/// Response error rate: the fraction of answers graded 1.
pub fn rer(graded: &[GradedAnswer]) -> Result<f64, EvalError> {
    let n = non_empty(graded)?;
    Ok(graded.iter().filter(|g| g.grade == 1).count() as f64 / n)
}

pub fn mrr(graded: &[GradedAnswer]) -> Result<f64, EvalError> {
    let n = non_empty(graded)?;
    Ok(graded
        .iter()
        .filter(|g| g.rank > 0)
        .map(|g| 1.0 / g.rank as f64)
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeSummary {
    pub count: usize,
    pub average_score: f64,
    pub succ_at_2: f64,
    pub succ_at_3: f64,
    pub succ_at_4: f64,
    pub rer: f64,
    pub mrr: f64,
}

pub fn summarize(graded: &[GradedAnswer]) -> Result<GradeSummary, EvalError> {
    Ok(GradeSummary {
        count: graded.len(),
        average_score: average_score(graded)?,
        succ_at_2: succ_at(graded, 2)?,
        succ_at_3: succ_at(graded, 3)?,
        succ_at_4: succ_at(graded, 4)?,
        rer: rer(graded)?,
        mrr: mrr(graded)?,
    })
}

#[derive(Deserialize)]
struct GradeRow {
    id: String,
    grade: i64,
    #[serde(default)]
    rank: Option<usize>,
}

/// Reads a CSV with header `id,grade,rank`; `rank` may be left empty.
pub fn read_grades(reader: impl Read) -> Result<Vec<GradedAnswer>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<GradeRow>() {
        let row = row.map_err(|e| EvalError::GradeFile {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let grade = u8::try_from(row.grade)
            .ok()
            .filter(|g| (1..=4).contains(g))
            .ok_or(EvalError::GradeOutOfRange(row.grade))
            .map_err(|e| EvalError::GradeFile {
                line: out.len() as u64 + 2,
                message: e.to_string(),
            })?;
        out.push(GradedAnswer {
            id: row.id,
            answer: String::new(),
            grade,
            rank: row.rank.unwrap_or(0),
        });
    }
    Ok(out)
}

pub fn load_grades(path: impl AsRef<Path>) -> Result<Vec<GradedAnswer>, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_grades(std::io::BufReader::new(file))
}
