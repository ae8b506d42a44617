//! Hard-distillation study: does teacher–student similarity track how well
//! distillation works?
//!
//! One fixed student spec is trained once from scratch (ground-truth labels)
//! and once per teacher (the teacher's argmax predictions as labels, same
//! seed throughout). Each student's accuracy is then correlated with the
//! teacher–student similarity score, overall and split by whether the
//! teacher shares the student's family; teacher accuracy is correlated too,
//! as a control.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::{train, LabelMode, TrainConfig};
use crate::nn::{eval, Model, ModelSpec};
use crate::sat::{sat, SatConfig};
use crate::stats::{self, Correlation};
use crate::zoo::Dataset;

/// Minimum teachers for the study to run at all.
pub const MIN_TEACHERS: usize = 6;

/// One teacher→student distillation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DistillRecord {
    pub teacher: String,
    pub teacher_family: String,
    pub student: String,
    pub student_accuracy: f64,
    pub teacher_accuracy: f64,
    /// Teacher–student similarity; NaN when the pair was incomparable.
    pub similarity: f64,
    pub same_family: bool,
    /// Teacher scored below the from-scratch student (kept, but flagged).
    pub below_scratch: bool,
}

/// A correlation or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MaybeCorrelation {
    pub correlation: Option<Correlation>,
    pub note: Option<String>,
}

fn correlate_or_note(xs: &[f64], ys: &[f64]) -> MaybeCorrelation {
    match stats::pearson(xs, ys) {
        Ok(c) => MaybeCorrelation { correlation: Some(c), note: None },
        Err(e) => MaybeCorrelation { correlation: None, note: Some(e.to_string()) },
    }
}

/// Everything the study produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DistillReport {
    pub records: Vec<DistillRecord>,
    /// Accuracy of the same student spec trained on ground-truth labels.
    pub scratch_accuracy: f64,
    pub student_family: String,
    /// Student accuracy vs teacher–student similarity, all teachers.
    pub accuracy_vs_similarity: MaybeCorrelation,
    /// Same, restricted to teachers in the student's family.
    pub same_family: MaybeCorrelation,
    /// Same, restricted to teachers outside the student's family.
    pub cross_family: MaybeCorrelation,
    /// Control: student accuracy vs teacher accuracy.
    pub accuracy_vs_teacher_accuracy: MaybeCorrelation,
}

impl DistillReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "teacher,teacher-family,student,student-accuracy,teacher-accuracy,similarity,same-family,below-scratch\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{},{},{}\n",
                r.teacher,
                r.teacher_family,
                r.student,
                r.student_accuracy,
                r.teacher_accuracy,
                if r.similarity.is_nan() { String::new() } else { format!("{:.6}", r.similarity) },
                r.same_family,
                r.below_scratch,
            ));
        }
        out
    }
}

/// Runs the distillation study.
///
/// `teachers` pairs each trained teacher with its family tag;
/// `student_spec` is cloned per teacher (renamed `{name}-from-{teacher}`);
/// all students share `train_cfg.seed`, so identical supervision produces
/// identical students. Incomparable teacher–student pairs keep their record
/// with a NaN similarity and drop out of the correlations only.
pub fn distill_study(
    teachers: &[(&Model, &str)],
    student_spec: &ModelSpec,
    student_family: &str,
    train_set: &Dataset,
    eval_set: &Dataset,
    train_cfg: &TrainConfig,
    sat_cfg: &SatConfig,
) -> Result<DistillReport> {
    if teachers.len() < MIN_TEACHERS {
        return Err(Error::Config(format!(
            "distillation study needs ≥ {MIN_TEACHERS} teachers, got {}",
            teachers.len()
        )));
    }
    {
        let mut families: Vec<&str> = teachers.iter().map(|(_, f)| *f).collect();
        families.sort_unstable();
        families.dedup();
        if families.len() < 2 {
            return Err(Error::Config(
                "distillation study needs teachers from ≥ 2 families".into(),
            ));
        }
    }
    let mut names: Vec<&str> = teachers.iter().map(|(t, _)| t.name()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != teachers.len() {
        return Err(Error::Config("duplicate teacher names in the study".into()));
    }

    // Baseline: the same spec trained from scratch on ground-truth labels.
    let scratch_cfg = TrainConfig { label_mode: LabelMode::HardLabels, ..train_cfg.clone() };
    let scratch = train(student_spec.clone(), train_set, eval_set, &scratch_cfg, None)?;
    let scratch_accuracy = scratch
        .meta()
        .final_clean_accuracy
        .ok_or_else(|| Error::Config("training did not record evaluation accuracy".into()))?;

    // One student per teacher; training runs are independent.
    let records: Vec<Result<DistillRecord>> = teachers
        .par_iter()
        .map(|(teacher, family)| {
            let mut spec = student_spec.clone();
            spec.name = format!("{}-from-{}", student_spec.name, teacher.name());
            let cfg = TrainConfig {
                label_mode: LabelMode::TeacherHardDistill { teacher: teacher.name().to_string() },
                ..train_cfg.clone()
            };
            let student = train(spec, train_set, eval_set, &cfg, Some(teacher))?;
            let student_accuracy = student.meta().final_clean_accuracy.unwrap_or(f64::NAN);

            let [h, w, _] = teacher.input_resolution();
            let view = crate::resize::to_resolution(&eval_set.images, h, w)?;
            let teacher_accuracy = eval::accuracy(teacher, &view, &eval_set.labels)?;
            let below_scratch = teacher_accuracy < scratch_accuracy;
            if below_scratch {
                log::warn!(
                    "teacher {} scores {teacher_accuracy:.3}, below the from-scratch student ({scratch_accuracy:.3})",
                    teacher.name()
                );
            }

            let similarity = match sat(teacher, &student, eval_set, sat_cfg) {
                Ok(score) => score.value,
                Err(Error::Incomparable { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            Ok(DistillRecord {
                teacher: teacher.name().to_string(),
                teacher_family: family.to_string(),
                student: student.name().to_string(),
                student_accuracy,
                teacher_accuracy,
                similarity,
                same_family: *family == student_family,
                below_scratch,
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;

    let comparable: Vec<&DistillRecord> =
        records.iter().filter(|r| !r.similarity.is_nan()).collect();
    let series = |pred: &dyn Fn(&DistillRecord) -> bool| -> (Vec<f64>, Vec<f64>) {
        comparable
            .iter()
            .filter(|r| pred(r))
            .map(|r| (r.similarity, r.student_accuracy))
            .unzip()
    };
    let (all_s, all_a) = series(&|_| true);
    let (same_s, same_a) = series(&|r| r.same_family);
    let (cross_s, cross_a) = series(&|r| !r.same_family);
    let teacher_acc: Vec<f64> = records.iter().map(|r| r.teacher_accuracy).collect();
    let student_acc: Vec<f64> = records.iter().map(|r| r.student_accuracy).collect();

    Ok(DistillReport {
        scratch_accuracy,
        student_family: student_family.to_string(),
        accuracy_vs_similarity: correlate_or_note(&all_s, &all_a),
        same_family: correlate_or_note(&same_s, &same_a),
        cross_family: correlate_or_note(&cross_s, &cross_a),
        accuracy_vs_teacher_accuracy: correlate_or_note(&teacher_acc, &student_acc),
        records,
    })
}
