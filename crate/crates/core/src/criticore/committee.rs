use rayon::prelude::*;

use crate::agents::{
    AgentBackend, AgentRequest, AGGREGATOR_PROMPT, EMPTY_RESPONSE, JUDGE_PROMPT, PROPOSER_PROMPT,
};
use crate::lexicon::{extract_text, tokenize};

use super::{Clause, CommitteeConfig, CommitteeMode, CritiError, PromptBundle, TranscriptEntry};

/// Agent id used by the judge and by aggregators.
const COORDINATOR: u32 = 0;

/// Committee instruction `x`: the prompt plus the critic's hints.
pub fn instruction(prompt: &PromptBundle, hints: &[String]) -> String {
    let hints = if hints.is_empty() {
        "none".to_owned()
    } else {
        hints.join("; ")
    };
    format!("prompt: {}\nhints: {hints}", prompt.text())
}

fn ask(
    backend: &dyn AgentBackend,
    stage: &'static str,
    step: usize,
    agent: u32,
    system: &str,
    user: String,
) -> Result<String, CritiError> {
    backend
        .respond(agent, &AgentRequest::with_system(system, user))
        .map(|r| r.text)
        .map_err(|source| CritiError::Agent {
            stage,
            step,
            agent,
            source,
        })
}

/// One debate round. Agent `i` (1-based) sees `x` and every other agent's
/// previous output, never its own; `previous` is empty in the first round.
pub fn mad_round(
    x: &str,
    previous: &[String],
    agents: usize,
    round: usize,
    backend: &dyn AgentBackend,
) -> Result<Vec<String>, CritiError> {
    (1..=agents as u32)
        .into_par_iter()
        .map(|i| {
            let mut user = x.to_owned();
            for (j, y) in previous.iter().enumerate() {
                let peer = j as u32 + 1;
                if peer != i {
                    user.push_str(&format!("\npeer {peer}: {y}"));
                }
            }
            ask(backend, "mad", round, i, PROPOSER_PROMPT, user)
        })
        .collect()
}

fn candidates_block(x: &str, candidates: &[(u32, String)]) -> String {
    let mut user = x.to_owned();
    for (id, text) in candidates {
        user.push_str(&format!("\ncandidate {id}: {text}"));
    }
    user
}

/// Final answer picked by the judge among `(agent id, text)` candidates.
pub fn judge(
    x: &str,
    candidates: &[(u32, String)],
    backend: &dyn AgentBackend,
) -> Result<String, CritiError> {
    if candidates.is_empty() {
        return Err(CritiError::EmptyInput("judge candidates"));
    }
    ask(backend, "judge", 0, COORDINATOR, JUDGE_PROMPT, candidates_block(x, candidates))
}

/// Layered proposers and aggregators; returns `s_L` and the transcript.
pub fn moa_aggregate(
    x: &str,
    widths: &[usize],
    backend: &dyn AgentBackend,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<String, CritiError> {
    let mut synthesis = x.to_owned();
    for (l, &n) in widths.iter().enumerate() {
        let layer = l + 1;
        let user = format!("{x}\nsynthesis: {synthesis}");
        let proposals: Vec<String> = (1..=n as u32)
            .into_par_iter()
            .map(|j| ask(backend, "moa", layer, j, PROPOSER_PROMPT, user.clone()))
            .collect::<Result<_, _>>()?;
        let candidates: Vec<(u32, String)> =
            proposals.into_iter().enumerate().map(|(j, t)| (j as u32 + 1, t)).collect();
        for (id, text) in &candidates {
            transcript.push(TranscriptEntry {
                agent: *id,
                stage: "moa".into(),
                step: layer,
                text: text.clone(),
            });
        }
        synthesis = ask(
            backend,
            "aggregate",
            layer,
            COORDINATOR,
            AGGREGATOR_PROMPT,
            candidates_block(x, &candidates),
        )?;
        transcript.push(TranscriptEntry {
            agent: COORDINATOR,
            stage: "aggregate".into(),
            step: layer,
            text: synthesis.clone(),
        });
    }
    Ok(synthesis)
}

/// Final committee text and the messages that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeOutcome {
    pub text: String,
    pub transcript: Vec<TranscriptEntry>,
}

/// Runs the configured committee on instruction `x`.
pub fn run_committee(
    x: &str,
    committee: &CommitteeConfig,
    backend: &dyn AgentBackend,
) -> Result<CommitteeOutcome, CritiError> {
    committee.validate()?;
    let mut transcript = Vec::new();
    let text = match committee.mode {
        CommitteeMode::Moa => moa_aggregate(x, &committee.widths, backend, &mut transcript)?,
        CommitteeMode::Mad => {
            let mut outputs: Vec<String> = Vec::new();
            for round in 1..=committee.rounds {
                outputs = mad_round(x, &outputs, committee.agents, round, backend)?;
                for (i, y) in outputs.iter().enumerate() {
                    transcript.push(TranscriptEntry {
                        agent: i as u32 + 1,
                        stage: "mad".into(),
                        step: round,
                        text: y.clone(),
                    });
                }
            }
            let candidates: Vec<(u32, String)> = outputs
                .into_iter()
                .enumerate()
                .map(|(i, y)| (i as u32 + 1, y))
                .collect();
            let verdict = judge(x, &candidates, backend)?;
            transcript.push(TranscriptEntry {
                agent: COORDINATOR,
                stage: "judge".into(),
                step: committee.rounds,
                text: verdict.clone(),
            });
            verdict
        }
    };
    Ok(CommitteeOutcome { text, transcript })
}

/// Clause texts of a committee answer: split on commas, semicolons and
/// newlines, tokenized, empty pieces and exact repeats dropped.
pub fn split_clauses(text: &str) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for piece in text.split([',', ';', '\n']) {
        if piece.trim() == EMPTY_RESPONSE {
            continue;
        }
        let tokens = tokenize(piece);
        if !tokens.is_empty() && !out.contains(&tokens) {
            out.push(tokens);
        }
    }
    out
}

/// Clauses for `(prompt, hints)`: committee answer split into clauses,
/// ordered prompt-grounded first, then hint-grounded, then the rest, with
/// ids assigned in that order.
pub fn decompose_clauses(
    prompt: &PromptBundle,
    hints: &[String],
    committee: &CommitteeConfig,
    backend: &dyn AgentBackend,
) -> Result<(Vec<Clause>, Vec<TranscriptEntry>), CritiError> {
    if prompt.is_empty() {
        return Err(CritiError::EmptyInput("prompt"));
    }
    let x = instruction(prompt, hints);
    let outcome = run_committee(&x, committee, backend)?;
    let in_prompt = prompt.descriptors();
    let in_hints = extract_text(&hints.join("\n"));
    let rank = |tokens: &Vec<String>| {
        let ds = crate::lexicon::extract(tokens);
        if ds.iter().any(|d| in_prompt.contains(d)) {
            0
        } else if ds.iter().any(|d| in_hints.contains(d)) {
            1
        } else {
            2
        }
    };
    let mut pieces = split_clauses(&outcome.text);
    pieces.sort_by_key(rank);
    let clauses = pieces
        .into_iter()
        .enumerate()
        .map(|(id, text)| Clause::new(id, text))
        .collect::<Result<_, _>>()?;
    Ok((clauses, outcome.transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{mock_respond, AgentError, AgentResponse, MockBackend, Usage};
    use proptest::prelude::*;
    use std::collections::BTreeSet;
    use std::sync::Mutex;
    use std::time::Duration;

    /// Records every request; answers like the mock agents.
    #[derive(Default)]
    struct Recorder {
        log: Mutex<Vec<(u32, String)>>,
    }

    impl AgentBackend for Recorder {
        fn name(&self) -> &str {
            "recorder"
        }
        fn respond(&self, agent: u32, req: &AgentRequest) -> Result<AgentResponse, AgentError> {
            self.log.lock().unwrap().push((agent, req.user_text()));
            Ok(mock_respond(agent, req))
        }
    }

    /// Debaters reply with their context's peer outputs plus `a<id>`.
    struct AppendId;

    impl AgentBackend for AppendId {
        fn name(&self) -> &str {
            "append-id"
        }
        fn respond(&self, agent: u32, req: &AgentRequest) -> Result<AgentResponse, AgentError> {
            let user = req.user_text();
            let text = if req.system_prompt() == Some(JUDGE_PROMPT) {
                user.lines().filter(|l| l.starts_with("candidate")).collect::<Vec<_>>().join(" | ")
            } else {
                let mut parts: Vec<String> = user
                    .lines()
                    .filter_map(|l| l.split_once(": ").filter(|(k, _)| k.starts_with("peer")))
                    .map(|(_, v)| v.to_owned())
                    .collect();
                parts.push(format!("a{agent}"));
                parts.join(" ")
            };
            Ok(AgentResponse {
                text,
                latency: Duration::ZERO,
                usage: Usage::default(),
                attempts: 1,
                degraded: false,
            })
        }
    }

    struct Failing;

    impl AgentBackend for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn respond(&self, agent: u32, _: &AgentRequest) -> Result<AgentResponse, AgentError> {
            Err(AgentError::Status {
                agent,
                status: 503,
                body: String::new(),
            })
        }
    }

    fn bundle(text: &str) -> PromptBundle {
        PromptBundle::from_text(text, 77)
    }

    #[test]
    fn single_agent_sees_only_instruction() {
        let rec = Recorder::default();
        let out = mad_round("prompt: a fox", &[], 1, 1, &rec).unwrap();
        assert_eq!(out, vec!["fox, orange"]);
        assert_eq!(rec.log.lock().unwrap()[0], (1, "prompt: a fox".to_owned()));
        let rec = Recorder::default();
        mad_round("x", &["only".to_owned()], 1, 2, &rec).unwrap();
        assert_eq!(rec.log.lock().unwrap()[0].1, "x");
    }

    #[test]
    fn context_excludes_own_output() {
        let rec = Recorder::default();
        let prev: Vec<String> = vec!["one".into(), "two".into(), "three".into()];
        mad_round("x", &prev, 3, 2, &rec).unwrap();
        let log = rec.log.lock().unwrap();
        let agent2 = &log.iter().find(|(a, _)| *a == 2).unwrap().1;
        assert_eq!(agent2, "x\npeer 1: one\npeer 3: three");
    }

    #[test]
    fn two_round_append_id_trace() {
        // Round 1: y1 = "a1", y2 = "a2".
        // Round 2: agent 1 sees peer 2 -> "a2 a1"; agent 2 sees peer 1 -> "a1 a2".
        let c = CommitteeConfig::mad(2, 2);
        let out = run_committee("x", &c, &AppendId).unwrap();
        let texts: Vec<(u32, usize, &str)> = out
            .transcript
            .iter()
            .map(|e| (e.agent, e.step, e.text.as_str()))
            .collect();
        assert_eq!(
            texts,
            vec![
                (1, 1, "a1"),
                (2, 1, "a2"),
                (1, 2, "a2 a1"),
                (2, 2, "a1 a2"),
                (0, 2, "candidate 1: a2 a1 | candidate 2: a1 a2"),
            ]
        );
    }

    #[test]
    fn judge_cases() {
        let one = vec![(4, "fox".to_owned())];
        assert_eq!(judge("x", &one, &MockBackend).unwrap(), "fox");
        let tie = vec![(1, "fox, red".to_owned()), (2, "dog, tall".to_owned())];
        assert_eq!(judge("x", &tie, &MockBackend).unwrap(), "fox, red");
        let cov = vec![
            (1, "fox, red".to_owned()),
            (2, "fox, red, tall, dark, misty".to_owned()),
            (3, "fox, red, tall".to_owned()),
        ];
        assert_eq!(judge("x", &cov, &MockBackend).unwrap(), cov[1].1);
        assert_eq!(judge("x", &[], &MockBackend), Err(CritiError::EmptyInput("judge candidates")));
    }

    #[test]
    fn moa_two_layer_trace() {
        // Layer 1: p1 = "knight, armored", p2 = "knight, steel, holding sword",
        // s1 = "knight, armored, steel, holding sword".
        // Layer 2 proposers read x and s1 and list entities with their own
        // implications first: p1 = s1, p2 = "knight, steel, holding sword, armored";
        // s2 is their first-seen union, equal to s1.
        let mut t = Vec::new();
        let x = "prompt: a knight\nhints: none";
        let s = moa_aggregate(x, &[2, 2], &MockBackend, &mut t).unwrap();
        assert_eq!(s, "knight, armored, steel, holding sword");
        let layer2: Vec<&str> = t
            .iter()
            .filter(|e| e.step == 2 && e.stage == "moa")
            .map(|e| e.text.as_str())
            .collect();
        assert_eq!(
            layer2,
            vec!["knight, armored, steel, holding sword", "knight, steel, holding sword, armored"]
        );
    }

    #[test]
    fn single_token_prompt_gives_one_entity_clause() {
        let (clauses, _) =
            decompose_clauses(&bundle("apple"), &[], &CommitteeConfig::moa(vec![3]), &MockBackend)
                .unwrap();
        assert_eq!(clauses.len(), 1);
        assert_eq!(clauses[0].text, vec!["apple"]);
        assert_eq!(clauses[0].kind, crate::lexicon::DescriptorKind::Entity);
    }

    #[test]
    fn duplicates_collapse() {
        // Agents 1 and 2 both propose "rabbit"; table 2 adds "fluffy" for both fox and rabbit.
        let (clauses, _) = decompose_clauses(
            &bundle("a fox and a rabbit"),
            &[],
            &CommitteeConfig::moa(vec![2]),
            &MockBackend,
        )
        .unwrap();
        let phrases: Vec<String> = clauses.iter().map(Clause::phrase).collect();
        assert_eq!(phrases, vec!["fox", "rabbit", "orange", "white", "fluffy"]);
    }

    #[test]
    fn three_agents_match_set_union() {
        let prompt = bundle("a fox, a knight, a castle, a lake, red and tall");
        let c = CommitteeConfig::moa(vec![3]);
        let (clauses, _) = decompose_clauses(&prompt, &[], &c, &MockBackend).unwrap();
        let x = instruction(&prompt, &[]);
        let mut oracle = BTreeSet::new();
        for agent in 1..=3 {
            let req = AgentRequest::with_system(
                PROPOSER_PROMPT,
                format!("{x}\nsynthesis: {x}"),
            );
            for piece in mock_respond(agent, &req).text.split(", ") {
                oracle.insert(piece.to_owned());
            }
        }
        let got: BTreeSet<String> = clauses.iter().map(Clause::phrase).collect();
        assert_eq!(got, oracle);
        assert_eq!(clauses.len(), oracle.len());
    }

    #[test]
    fn ordering_puts_prompt_then_hints_first() {
        let (clauses, _) = decompose_clauses(
            &bundle("a dog"),
            &["missing red".to_owned()],
            &CommitteeConfig::moa(vec![1]),
            &MockBackend,
        )
        .unwrap();
        let phrases: Vec<String> = clauses.iter().map(Clause::phrase).collect();
        // Proposer 1 reads "a dog ... missing red": dog, steampunk (table 1), red.
        assert_eq!(phrases, vec!["dog", "red", "steampunk"]);
        assert_eq!(clauses.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert_eq!(
            decompose_clauses(&bundle(""), &[], &CommitteeConfig::default(), &MockBackend),
            Err(CritiError::EmptyInput("prompt"))
        );
    }

    #[test]
    fn errors_carry_coordinates() {
        let err = run_committee("x", &CommitteeConfig::moa(vec![2]), &Failing).unwrap_err();
        assert!(matches!(err, CritiError::Agent { stage: "moa", step: 1, agent: 1, .. }));
        let err = run_committee("x", &CommitteeConfig::mad(2, 1), &Failing).unwrap_err();
        assert!(matches!(err, CritiError::Agent { stage: "mad", step: 1, .. }));
    }

    #[test]
    fn split_drops_empty_marker_and_repeats() {
        assert_eq!(
            split_clauses("fox; Fox,\n<none>, , orange"),
            vec![vec!["fox".to_owned()], vec!["orange".to_owned()]]
        );
    }

    proptest! {
        #[test]
        fn moa_call_count(widths in proptest::collection::vec(1usize..6, 1..4)) {
            let rec = Recorder::default();
            let mut t = Vec::new();
            moa_aggregate("prompt: a fox", &widths, &rec, &mut t).unwrap();
            let want: usize = widths.iter().map(|n| n + 1).sum();
            prop_assert_eq!(rec.log.lock().unwrap().len(), want);
        }

        #[test]
        fn mad_never_shows_own_output(m in 1usize..=6, rounds in 1usize..=3) {
            let rec = Recorder::default();
            let wrapped = Tagging(&rec);
            run_committee("x", &CommitteeConfig::mad(m, rounds), &wrapped).unwrap();
            let log = rec.log.lock().unwrap();
            prop_assert_eq!(log.len(), m * rounds + 1);
            for (agent, user) in log.iter().filter(|(a, _)| *a != 0) {
                let own = format!("tag{agent}r");
                prop_assert!(!user.contains(&own));
            }
        }
    }

    /// Makes every debater's output unique so that context leaks are visible.
    struct Tagging<'a>(&'a Recorder);

    impl AgentBackend for Tagging<'_> {
        fn name(&self) -> &str {
            "tagging"
        }
        fn respond(&self, agent: u32, req: &AgentRequest) -> Result<AgentResponse, AgentError> {
            let mut r = self.0.respond(agent, req)?;
            let round = req.user_text().lines().filter(|l| l.starts_with("peer")).count();
            r.text = format!("tag{agent}r{round}");
            Ok(r)
        }
    }
}
