//! Three-role prompt templates for the decision and recommendation
//! treatments.
//!
//! Placeholders are written `{name}`; filling checks that every placeholder
//! receives a value and every value is used.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{Message, Role, Treatment, TreatmentKind};
use crate::data::{ReturnPair, SubjectDataset};
use crate::error::{Error, Result};

/// Rounds per session, fixed by the task description.
pub const SESSION_ROUNDS: usize = 25;

/// Decimal places used when numbers are shown to the model.
pub const DISPLAY_DECIMALS: u32 = 2;

pub const DECISION_SYSTEM: &str = "I want you to act as a human decision maker. You will be given 25 rounds of decision-making tasks. You will be responsible for making decisions. You should use your best judgment to come up with solutions that you like most. You must provide your answers in every round. If you do not provide an answer, I will assume that you are making a random choice and implement one on your behalf.";

pub const DECISION_ASSISTANT: &str = "In each round, you will have 100 points that need to be invested between asset A and asset B. You will get a return from one of the 25 rounds randomly. In the selected paying round, you have a 50% chance to get the return from asset A or the other 50% chance to get the return from asset B. In your answer, please only tell me the number of points for investing in asset A, and then please only tell me the number of points for investing in asset B.";

pub const DECISION_USER: &str = "In this round, investing every 1 point for asset A returns {r_a} dollars, and investing every 1 point for asset B returns {r_b} dollars. What is your allocation? Provide your answer in 150 characters or less, if possible; for example, “I will invest M points to asset A and N points to asset B.”";

/// Appended to a decision prompt when the previous answer could not be used.
pub const DECISION_REMINDER: &str = "Please answer exactly in the form “I will invest M points to asset A and N points to asset B.” with M + N = 100.";

pub const RECOMMENDATION_SYSTEM: &str = "I want you to act as a recommendation system for our valuable customers. One of our customers will be given 25 rounds of decision-making tasks, and you will be responsible for providing recommendations for the customer. You should use your best judgment to come up with solutions that the customer likes most. You must provide your answers in every round. If you do not provide an answer, I will assume you are making a random choice and will implement it for the customer.";

pub const RECOMMENDATION_ASSISTANT: &str = "In each round, the customer will have 100 points that need to be invested between asset A and asset B. The customer will get a return from one of the 25 rounds randomly. In the selected paying round, the customer has a 50% chance to get the return from asset A or the other 50% chance to get the return from asset B.";

pub const PERSONALIZED_DATA_BLOCK: &str = "To help you understand the customer's preferences, we asked the customer to participate in {sample_size} rounds of the same tasks. The following data table summarizes the customer's choices.

{data_table}

In the data table, the first column represents the dollar amount that each point for asset A returns if it is chosen. The second column represents the dollar amount that each point for asset B returns if it is chosen. The third column indicates the customer's investment in asset A, and the last column indicates the customer's investment in asset B. Note that the sum of investments may differ slightly from 100 due to a measurement error.";

pub const RECOMMENDATION_USER: &str = "The following return table displays the returns of assets. The first column represents the round, with a total of 25 rounds. The second column indicates the dollar return for each 1 point of asset A. The third column indicates the dollar return for each 1 point of asset B.

{return_table}

What is your recommendation for investments in each round for the two assets? Provide your answer for example, “In round 1, I recommend investing M1 points in asset A and N1 points in asset B. In round 2, I recommend investing M2 points in asset A and N2 points in asset B.”";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

/// Substitutes `{name}` placeholders. Missing or unused values are errors.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let wanted: BTreeSet<&str> = PLACEHOLDER
        .captures_iter(template)
        .map(|c| c.get(1).unwrap().as_str())
        .collect();
    let given: BTreeSet<&str> = values.iter().map(|(k, _)| *k).collect();
    if wanted != given {
        let missing: Vec<_> = wanted.difference(&given).collect();
        let extra: Vec<_> = given.difference(&wanted).collect();
        return Err(Error::Template(format!(
            "placeholder mismatch: missing {missing:?}, unused {extra:?}"
        )));
    }
    Ok(PLACEHOLDER
        .replace_all(template, |c: &regex::Captures| {
            let key = &c[1];
            values.iter().find(|(k, _)| *k == key).unwrap().1.to_string()
        })
        .into_owned())
}

/// Shortest decimal rendering after rounding to [`DISPLAY_DECIMALS`].
pub fn display_number(v: f64) -> String {
    let k = 10f64.powi(DISPLAY_DECIMALS as i32);
    let r = (v * k).round() / k;
    // Avoid "-0".
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

/// Pipe table with a header row and one line per round.
fn table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = format!("| {} |\n|{}", header.join(" | "), "---|".repeat(header.len()));
    for row in rows {
        out.push_str(&format!("\n| {} |", row.join(" | ")));
    }
    out
}

pub fn return_table(schedule: &[ReturnPair]) -> String {
    table(
        &["Round", "Asset A return", "Asset B return"],
        schedule.iter().enumerate().map(|(k, r)| {
            vec![(k + 1).to_string(), display_number(r.a()), display_number(r.b())]
        }),
    )
}

pub fn data_table(sample: &SubjectDataset) -> String {
    table(
        &["Asset A return", "Asset B return", "Investment in A", "Investment in B"],
        sample.rounds().iter().map(|c| {
            let (r, t) = match c.observed() {
                crate::data::Observation::Tokens {
                    returns,
                    allocation,
                } => (*returns, *allocation),
                crate::data::Observation::Prices { .. } => (c.returns(), c.tokens()),
            };
            vec![
                display_number(r.a()),
                display_number(r.b()),
                display_number(t.a()),
                display_number(t.b()),
            ]
        }),
    )
}

/// The answer sentence of the decision template with concrete numbers.
pub fn decision_answer(t_a: f64, t_b: f64) -> String {
    format!("I will invest {t_a} points to asset A and {t_b} points to asset B.")
}

/// One sentence per round in the recommendation answer format.
pub fn recommendation_answer(allocations: &[(f64, f64)]) -> String {
    allocations
        .iter()
        .enumerate()
        .map(|(k, (a, b))| {
            format!(
                "In round {}, I recommend investing {a} points in asset A and {b} points in asset B.",
                k + 1
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn decision_user(r: ReturnPair) -> Result<String> {
    fill(
        DECISION_USER,
        &[("r_a", &display_number(r.a())), ("r_b", &display_number(r.b()))],
    )
}

/// Opening system and assistant messages shared by every request of a
/// treatment.
pub fn preamble(treatment: &Treatment) -> Result<Vec<Message>> {
    Ok(match treatment.kind() {
        TreatmentKind::Decision => vec![
            Message::new(Role::System, DECISION_SYSTEM),
            Message::new(Role::Assistant, DECISION_ASSISTANT),
        ],
        TreatmentKind::Recommendation => vec![
            Message::new(Role::System, RECOMMENDATION_SYSTEM),
            Message::new(Role::Assistant, RECOMMENDATION_ASSISTANT),
        ],
        TreatmentKind::PersonalizedRecommendation => {
            let sample = treatment
                .sample()
                .ok_or_else(|| Error::Template("personalized treatment without sample data".into()))?;
            let block = fill(
                PERSONALIZED_DATA_BLOCK,
                &[
                    ("sample_size", &sample.len().to_string()),
                    ("data_table", &data_table(sample)),
                ],
            )?;
            vec![
                Message::new(Role::System, RECOMMENDATION_SYSTEM),
                Message::new(Role::Assistant, format!("{RECOMMENDATION_ASSISTANT}\n\n{block}")),
            ]
        }
    })
}

/// Messages for one request. Decision treatments take the current round's
/// returns; recommendation treatments take the whole schedule.
pub fn build_prompt(treatment: &Treatment, schedule: &[ReturnPair]) -> Result<Vec<Message>> {
    let mut msgs = preamble(treatment)?;
    match treatment.kind() {
        TreatmentKind::Decision => {
            let [r] = schedule else {
                return Err(Error::Template(format!(
                    "decision prompt takes one round, got {}",
                    schedule.len()
                )));
            };
            msgs.push(Message::new(Role::User, decision_user(*r)?));
        }
        _ => {
            let user = fill(RECOMMENDATION_USER, &[("return_table", &return_table(schedule))])?;
            msgs.push(Message::new(Role::User, user));
        }
    }
    Ok(msgs)
}
