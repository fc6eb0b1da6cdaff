use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    classify_task, split_requirements, standardize_prompt, Category, Condition, Derivation, EditRequest, EditTask,
    GenerationJob, GenerationParams, GenerationPrompt, PlannerError,
};
use crate::automask::{store_mask_plan, AutomaskConfig, Automasker, MaskPlan, OcclusionRuleTable, SourceProvenance};
use crate::backend::{Backends, ChatModel, EdgeExtractor};
use crate::coseg::{CoSegmentation, SynonymTable};
use crate::mask::encode_mask_png;
use crate::store::{sha256_hex, BlobStore, ContentHash};

/// Provides (usually cached) cosegmentations for stored images.
pub trait CosegSource: Send + Sync {
    fn cosegmentation(&self, image: &ContentHash) -> Result<Arc<CoSegmentation>, PlannerError>;
}

/// Builds the generation job. Only Recoloring calls the edge backend and
/// carries the edge condition; its failure there is a pipeline error.
pub fn plan_generation(
    task: &EditTask,
    plan: &MaskPlan,
    image: &ContentHash,
    prompt: GenerationPrompt,
    edge: &dyn EdgeExtractor,
    seed: u64,
    params: GenerationParams,
) -> Result<GenerationJob, PlannerError> {
    if plan.mask.is_empty() {
        return Err(PlannerError::Pipeline("editing mask is empty".into()));
    }
    let condition = if task.category == Category::Recoloring {
        let edge_ref = edge
            .edges(image)
            .map_err(|e| PlannerError::Pipeline(format!("recoloring needs an edge map: {e}")))?;
        Condition::InpaintEdge { edge_ref }
    } else {
        Condition::Inpaint
    };
    Ok(GenerationJob {
        category: task.category,
        image_ref: image.clone(),
        mask: plan.mask.clone(),
        prompt,
        condition,
        seed,
        params,
    })
}

/// Clauses paired with their classification outcome, in request order.
pub type Classified = Vec<(String, Result<(EditTask, Derivation), PlannerError>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub automask: AutomaskConfig,
    pub generation: GenerationParams,
    /// Fixed base seed (task k uses `seed + k - 1`); random per job when unset.
    pub seed: Option<u64>,
    pub negative_prompt: String,
    /// Use the chat backend for splitting, classification and prompts;
    /// otherwise only the rule-based paths run.
    pub use_language_model: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            automask: AutomaskConfig::default(),
            generation: GenerationParams::default(),
            seed: None,
            negative_prompt: crate::resources::negative_prompt(),
            use_language_model: true,
        }
    }
}

/// One line of the job log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub task_number: usize,
    pub category: Category,
    pub source_desc: Option<String>,
    pub target_desc: Option<String>,
    pub raw_text: String,
    pub input_ref: ContentHash,
    pub mask_ref: ContentHash,
    pub mask_plan_ref: ContentHash,
    pub mask_provenance: SourceProvenance,
    pub occluded_labels: Vec<String>,
    pub dilation_radius: u32,
    pub prompt: String,
    pub negative_prompt: String,
    pub prompt_derivation: Derivation,
    pub vqa: Vec<super::VqaExchange>,
    pub condition: String,
    pub edge_ref: Option<ContentHash>,
    pub seed: u64,
    pub params: GenerationParams,
    pub result_ref: ContentHash,
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub task_number: usize,
    pub task: EditTask,
    pub classification: Derivation,
    pub plan: MaskPlan,
    pub job: JobRecord,
    /// The job record as stored JSON.
    pub job_ref: ContentHash,
}

impl TaskOutcome {
    pub fn input_ref(&self) -> &ContentHash {
        &self.job.input_ref
    }

    pub fn result_ref(&self) -> &ContentHash {
        &self.job.result_ref
    }
}

#[derive(Debug)]
pub struct TaskFailure {
    /// 1-based position of the failing clause.
    pub task_number: usize,
    pub clause: String,
    pub error: PlannerError,
}

#[derive(Debug)]
pub struct ExecutionReport {
    pub clauses: Vec<String>,
    pub split: Derivation,
    pub results: Vec<TaskOutcome>,
    pub failure: Option<TaskFailure>,
}

impl ExecutionReport {
    /// Output of the last successful task, if any.
    pub fn final_image(&self) -> Option<&ContentHash> {
        self.results.last().map(|r| r.result_ref())
    }
}

/// Progress notifications while a plan runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ProgressEvent {
    Planned { clauses: Vec<String> },
    TaskStarted { task_number: usize, total: usize, clause: String },
    TaskFinished { task_number: usize, result_ref: ContentHash, mask_ref: ContentHash },
    TaskFailed { task_number: usize, message: String },
}

pub struct Planner<'a> {
    pub backends: &'a Backends,
    pub store: &'a BlobStore,
    pub synonyms: &'a SynonymTable,
    pub occlusion: &'a OcclusionRuleTable,
    pub config: &'a PlannerConfig,
    pub coseg: &'a dyn CosegSource,
    /// JSON-lines job log, appended once per executed task.
    pub job_log: Option<PathBuf>,
    pub observer: Option<&'a (dyn Fn(&ProgressEvent) + Sync)>,
}

impl Planner<'_> {
    fn model(&self) -> Option<&dyn ChatModel> {
        self.config.use_language_model.then_some(self.backends.chat.as_ref())
    }

    fn notify(&self, event: ProgressEvent) {
        if let Some(f) = self.observer {
            f(&event);
        }
    }

    pub fn split(&self, requirement: &str) -> Result<(Vec<String>, Derivation), PlannerError> {
        split_requirements(requirement, self.model())
    }

    pub fn classify(&self, clause: &str) -> Result<(EditTask, Derivation), PlannerError> {
        classify_task(clause, self.model())
    }

    /// Splits, then classifies and runs each clause in order against the
    /// previous clause's output. Stops at the first failing clause; results
    /// already produced are kept.
    pub fn execute_plan(&self, request: &EditRequest) -> Result<ExecutionReport, PlannerError> {
        let (clauses, split) = self.split(&request.text)?;
        self.execute_clauses(&request.image_ref, clauses, split)
    }

    /// Classifies every clause, then runs them as [`Self::execute_classified`].
    pub fn execute_clauses(
        &self,
        image: &ContentHash,
        clauses: Vec<String>,
        split: Derivation,
    ) -> Result<ExecutionReport, PlannerError> {
        let classified = clauses
            .into_iter()
            .map(|c| {
                let r = self.classify(&c);
                (c, r)
            })
            .collect();
        self.execute_classified(image, classified, split)
    }

    /// Runs already classified clauses in order, each against the previous
    /// output. The first clause whose classification or execution failed
    /// ends the run.
    pub fn execute_classified(
        &self,
        image: &ContentHash,
        clauses: Classified,
        split: Derivation,
    ) -> Result<ExecutionReport, PlannerError> {
        if clauses.is_empty() {
            return Err(PlannerError::EmptyPlan);
        }
        let texts: Vec<String> = clauses.iter().map(|c| c.0.clone()).collect();
        self.notify(ProgressEvent::Planned { clauses: texts.clone() });
        let mut report = ExecutionReport {
            clauses: texts,
            split,
            results: Vec::new(),
            failure: None,
        };
        let total = clauses.len();
        let mut current = image.clone();
        for (i, (clause, classified)) in clauses.into_iter().enumerate() {
            let task_number = i + 1;
            self.notify(ProgressEvent::TaskStarted {
                task_number,
                total,
                clause: clause.clone(),
            });
            match classified.and_then(|(task, how)| self.run_task(task_number, task, how, &current)) {
                Ok(outcome) => {
                    current = outcome.result_ref().clone();
                    self.notify(ProgressEvent::TaskFinished {
                        task_number,
                        result_ref: current.clone(),
                        mask_ref: outcome.job.mask_ref.clone(),
                    });
                    report.results.push(outcome);
                }
                Err(error) => {
                    self.notify(ProgressEvent::TaskFailed {
                        task_number,
                        message: error.to_string(),
                    });
                    report.failure = Some(TaskFailure {
                        task_number,
                        clause,
                        error,
                    });
                    break;
                }
            }
        }
        Ok(report)
    }

    fn run_task(
        &self,
        task_number: usize,
        task: EditTask,
        classification: Derivation,
        image: &ContentHash,
    ) -> Result<TaskOutcome, PlannerError> {
        let coseg = self.coseg.cosegmentation(image)?;
        let automasker = Automasker {
            backends: self.backends,
            synonyms: self.synonyms,
            occlusion: self.occlusion,
            config: &self.config.automask,
        };
        let plan = automasker.generate_mask(image, &task, &coseg)?;
        let prompt = standardize_prompt(
            image,
            &task,
            self.backends.vqa.as_ref(),
            self.model(),
            &self.config.negative_prompt,
        );
        let seed = match self.config.seed {
            Some(s) => s.wrapping_add(task_number as u64 - 1),
            None => rand::random(),
        };
        let job = plan_generation(
            &task,
            &plan,
            image,
            prompt,
            self.backends.edge.as_ref(),
            seed,
            self.config.generation,
        )?;
        let result_ref = self.backends.generator.generate(&job)?;

        let (mask_plan_ref, plan_record) = store_mask_plan(&plan, self.store)?;
        let mask_ref = self.store.put(&encode_mask_png(&plan.mask).map_err(crate::automask::AutomaskError::from)?)?;
        debug_assert_eq!(mask_ref, plan_record.mask_png);
        let edge_ref = match &job.condition {
            Condition::InpaintEdge { edge_ref } => Some(edge_ref.clone()),
            Condition::Inpaint => None,
        };
        let job_id = sha256_hex(format!("{task_number}|{image}|{mask_ref}|{}|{seed}", job.prompt.text).as_bytes())[..16].to_string();
        let record = JobRecord {
            job_id,
            task_number,
            category: task.category,
            source_desc: task.source_desc.clone(),
            target_desc: task.target_desc.clone(),
            raw_text: task.raw_text.clone(),
            input_ref: image.clone(),
            mask_ref,
            mask_plan_ref,
            mask_provenance: plan.source_provenance(),
            occluded_labels: plan.occluded_labels(),
            dilation_radius: plan.dilation_radius,
            prompt: job.prompt.text.clone(),
            negative_prompt: job.prompt.negative_text.clone(),
            prompt_derivation: job.prompt.derivation,
            vqa: job.prompt.source_details.clone(),
            condition: job.condition.name().to_string(),
            edge_ref,
            seed,
            params: job.params,
            result_ref,
        };
        let mut line = serde_json::to_vec(&record).expect("plain record serializes");
        let job_ref = self.store.put(&line)?;
        if let Some(path) = &self.job_log {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            line.push(b'\n');
            f.write_all(&line)?;
        }
        Ok(TaskOutcome {
            task_number,
            task,
            classification,
            plan,
            job: record,
            job_ref,
        })
    }
}
