//! Role instruction templates and placeholder substitution.
//!
//! Five built-in templates cover the loop: two proposer variants (from
//! scratch, from a reference), the solver instruction, and the two judge
//! rubrics (answer scoring, question-quality scoring). Bodies carry named
//! placeholders like `{question}`; rendering is a single left-to-right
//! pass, so placeholder-shaped text inside a bound value is never itself
//! substituted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RoleId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no binding supplied for placeholder {{{placeholder}}}")]
    MissingBinding { placeholder: String },
    #[error("placeholder {{{placeholder}}} appears more than once in the template")]
    DuplicatePlaceholder { placeholder: String },
}

/// Placeholder names the renderer recognizes; anything else inside braces
/// is literal text.
pub const KNOWN_PLACEHOLDERS: &[&str] =
    &["question", "answer", "reference", "ground_truth", "model_answer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    ProposeNoRef,
    ProposeWithRef,
    Solve,
    JudgeAnswer,
    JudgeQuestion,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::ProposeNoRef,
        PromptVariant::ProposeWithRef,
        PromptVariant::Solve,
        PromptVariant::JudgeAnswer,
        PromptVariant::JudgeQuestion,
    ];

    pub fn role(self) -> RoleId {
        match self {
            PromptVariant::ProposeNoRef | PromptVariant::ProposeWithRef => RoleId::Proposer,
            PromptVariant::Solve => RoleId::Solver,
            PromptVariant::JudgeAnswer | PromptVariant::JudgeQuestion => RoleId::Judge,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::ProposeNoRef => "propose_no_ref",
            PromptVariant::ProposeWithRef => "propose_with_ref",
            PromptVariant::Solve => "solve",
            PromptVariant::JudgeAnswer => "judge_answer",
            PromptVariant::JudgeQuestion => "judge_question",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: RoleId,
    pub variant: PromptVariant,
    pub body: String,
}

impl PromptTemplate {
    /// The stock template for a variant. Instruction bodies are fixed
    /// texts; the solve and with-reference bodies end with a task block
    /// holding the one placeholder the caller must bind.
    pub fn builtin(variant: PromptVariant) -> Self {
        let body = match variant {
            PromptVariant::ProposeNoRef => PROPOSE_NO_REF_BODY.to_string(),
            PromptVariant::ProposeWithRef => {
                format!("{PROPOSE_WITH_REF_BODY}\n\n### Reference Task:\n\n{{reference}}")
            }
            PromptVariant::Solve => format!("{SOLVE_BODY}\n\n### Task:\n\n{{question}}"),
            PromptVariant::JudgeAnswer => JUDGE_ANSWER_BODY.to_string(),
            PromptVariant::JudgeQuestion => JUDGE_QUESTION_BODY.to_string(),
        };
        PromptTemplate {
            role: variant.role(),
            variant,
            body,
        }
    }

    pub fn custom(role: RoleId, variant: PromptVariant, body: impl Into<String>) -> Self {
        PromptTemplate {
            role,
            variant,
            body: body.into(),
        }
    }
}

/// Substitutes every recognized placeholder in one pass. Each placeholder
/// may appear at most once; unused bindings are ignored; an unbound
/// placeholder is an error naming it.
pub fn build_prompt(
    template: &PromptTemplate,
    bindings: &[(&str, &str)],
) -> Result<String, PromptError> {
    render_body(&template.body, bindings)
}

/// Template-free renderer with the same substitution rules.
pub fn render_body(body: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut seen: Vec<&str> = Vec::new();
    let mut rest = body;

    'scan: while let Some(open) = rest.find('{') {
        let (literal, tail) = rest.split_at(open);
        out.push_str(literal);
        for &name in KNOWN_PLACEHOLDERS {
            let token_len = 1 + name.len() + 1;
            if tail.len() >= token_len
                && tail[1..].starts_with(name)
                && tail.as_bytes()[1 + name.len()] == b'}'
            {
                if seen.contains(&name) {
                    return Err(PromptError::DuplicatePlaceholder {
                        placeholder: name.to_string(),
                    });
                }
                seen.push(name);
                let value = bindings
                    .iter()
                    .find(|(key, _)| *key == name)
                    .map(|(_, value)| *value)
                    .ok_or_else(|| PromptError::MissingBinding {
                        placeholder: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

const SOLVE_BODY: &str = r#"## Task: Generate a High-Quality Response to a Given Task

You will be given a cognitive, creative, logical, mathematical, or planning-related task. Your job is to generate a complete, high-quality response that satisfies the task's constraints and demonstrates clear, structured reasoning or creativity.

### Instructions:
- Carefully read and understand the task.
- Think step by step - break down the task, simulate it mentally if needed, and reason through constraints.
- Then directly write your final response inside a pair of <answer></answer> tags(no need to restate or reformat the task).
- Your output should:
  * Be **correct** or **plausibly optimal**, given the task
  * **Fulfill all constraints** in the task
  * Be **clear** and **structured**
  * Avoid any vagueness or randomness

### Good Response Traits:
- For reasoning tasks: shows logical progression and result
- For generation tasks: respects the given constraints
- For math/logic/planning: includes a final answer that could be evaluated
- For creative tasks: coherent and original"#;

const PROPOSE_NO_REF_BODY: &str = r#"## Task: Create a Challenging and Original Task

Design a new and intellectually demanding task that tests **complex reasoning, creative thinking, structured planning, or deep understanding**. The task should be suitable for evaluation in general intelligence, reasoning benchmarks or instruction following.

You may design a task that resembles a quiz, puzzle or symbolic reasoning prompt. Focus on structure, challenge, and clarity.

---

### Task Requirements:

- The task must be:
  * **Self-contained** and clearly described
  * **Non-trivial**, requiring multiple reasoning steps, constraints, or synthesis
  * **Deterministic** or tightly constrained (even if open-ended in form)
  * **Free from cultural bias or real-time information**
  * **Difficult** but **not impossible** to solve

- Accepted Domains include:
  * Logic puzzles and reasoning tasks
  * Context comprehension
  * Common knowledge Q&A
  * Pattern-based math or symbolic challenges
  * Spatial planning or constraint problems
  * Instruction followings tasks

- Avoid:
  * Trivia questions or subjective writing
  * Ambiguous or taste-based open-ended prompts
  * Any dependency on web access or recent knowledge
  * Tasks with no clear solvability path

---

Follow the following format:

<question>
[Your generated question here]
</question>

MAKE SURE THAT EVERY GENERATED QUESTION AND **ONLY THE GENERATED QUESTION** IS INSIDE THE <question></question> TAGS!
USING THE CORRECT FORMAT AS GIVEN IS IMPORTANT!"#;

const PROPOSE_WITH_REF_BODY: &str = r#"## Task: Create a Challenging and Modified Version of a Reference Task

Given one **reference task**, your goal is to design a **new, more challenging task** by making **controlled perturbations** to the original. The modifications should **increase reasoning depth, introduce extra constraints, or add multi-step dependencies** while keeping the problem **self-contained and solvable**.

You must preserve the **core domain or reasoning type** of the reference (e.g., if it's a logic puzzle, keep it a logic puzzle) but ensure the **surface content and structure are new**. You may:
- Add additional constraints or intermediate steps
- Replace elements with analogous but more complex structures
- Introduce distractors or traps that require careful reasoning
- Change numerical values, symbolic rules, or conditions to increase difficulty

---

### Task Requirements:

- The modified task must be:
  * **Self-contained** and clearly described
  * **Significantly different in surface form** from the reference, but maintain same reasoning type
  * **More challenging** - requiring additional steps or deeper analysis than the reference
  * **Deterministic** or tightly constrained
  * **Free from cultural bias, real-time info, or factual recall**

- Avoid:
  * Trivia questions or subjective writing
  * Ambiguous or taste-based open-ended prompts
  * Any dependency on web access or recent knowledge
  * Tasks with no clear solvability path

---

Follow the following format:

<question>
[Your generated question here]
</question>

MAKE SURE THAT EVERY GENERATED QUESTION AND **ONLY THE GENERATED QUESTION** IS INSIDE THE <question></question> TAGS!
USING THE CORRECT FORMAT AS GIVEN IS IMPORTANT!"#;

const JUDGE_ANSWER_BODY: &str = r#"Please evaluate the following solution to a question/problem following a strict rubric.

Question/Problem: {question}

Generated Solution: {answer}

First, analyze the solution in the <think> and </think> tags below:

<think>
STRICT RUBRIC:
- Factual correctness is mandatory. ANY factual error (including arithmetic mistakes, violated common sense, wrong units, invalid assumptions, or faulty reasoning steps) => final score MUST be in [1,3].
- Meaningless or excessive repetition, rambling, or filler content => final score MUST be in [1,3].
- Hallucinated references, fabricated data, unsupported claims, or contradictions => final score MUST be in [1,3].
- Completeness & directness: The answer must fully address the asked question. Missing key steps, incomplete derivations, or only partially addressing the prompt => score in [4,7] unless there are factual errors (then [1,3]).
- Only answers that are entirely correct, follow instructions, are concise (no redundant repetition) may receive [8,10].

[Write your detailed analysis here: identify any factual errors, faulty reasoning steps or repetition issues. If ANY such issue exists, note that the score band must be [1,3]. If none, justify why it qualifies for 8-10; otherwise place it in 4-7.]
</think>

Then provide a score from 1 to 10 between <score> and </score> consistent with your thoughts where:
- 8-10: Flawless or near-flawless: entirely correct; no factual/logic/common-sense/calculation errors; concise with no meaningless repetition; fully answers the question.
- 4-7: Generally on-topic and partially correct, but has omissions or clarity problems (NO factual errors).
- 1-3: ANY factual/logic/common-sense/calculation error OR hallucination OR large meaningless repetition OR severe irrelevance.

<score>X</score> (where X is an integer from 1 to 10)"#;

const JUDGE_QUESTION_BODY: &str = r#"Please evaluate the quality of the following question generation following a strict rubric.

Question: {question}

First, analyze the question in the <think> and </think> tags below:

<think>
STRICT RUBRIC (Question):
- If the question is unsolvable as stated (insufficient information, internal contradiction, presupposition failure), violates common sense, logically incoherent or simply not in the form of a question => final score MUST be in [1,3].
- If the question is unsafe/inappropriate or not actually a question => final score MUST be in [1,3].
- If the question is too open-ended => final score MUST be in [1,3].
- Clarity & completeness: ambiguous wording, missing constraints, or unclear objectives => typically [4,7] (unless it's unsolvable/incoherent, then [1,3]).
- Only questions that are fully clear, well-formed, logically sound, feasible/solvable, relevant, and concise (no redundant repetition) may receive [8,10].

[Write your detailed analysis here: check solvability, logical soundness, clarity, relevance, and redundancy. If ANY unsolvability or commonsense violation exists, score must be [1,3].]
</think>

Then provide a score from 1 to 10 between <score> and </score> consistent with your thoughts where:
- 8-10: Perfectly clear, feasible, self-contained, logically sound, and concise; appropriate and relevant.
- 4-7: Generally reasonable but with notable ambiguity, missing details, or minor issues (NO unsolvability/commonsense violations).
- 1-3: Unsolvable/contradictory/commonsense-violating/unsafe/irrelevant/not a valid question.

<score>X</score> (where X is an integer from 1 to 10)"#;
