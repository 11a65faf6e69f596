//! Corpus ingestion and dialogue statistics.
//!
//! Every statistic is a fold over dialogues with integer counters, so results
//! do not depend on dialogue order. Tables render to TSV for reading and to
//! JSON at full precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Tally;
use crate::game::TurnCategory;
use crate::transcript::{read_games, GameLog, TranscriptError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub utterances: Vec<String>,
    pub success: bool,
    #[serde(default)]
    pub shared_count: Option<usize>,
    #[serde(default)]
    pub category: Option<TurnCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    #[serde(default)]
    pub scenario_seed: Option<u64>,
    pub turns: Vec<DialogueTurn>,
    pub lst: usize,
    pub completed_turns: usize,
    #[serde(default)]
    pub workers: Vec<String>,
    #[serde(default)]
    pub duration_minutes: Option<f64>,
}

impl Dialogue {
    pub fn utterance_count(&self) -> usize {
        self.turns.iter().map(|t| t.utterances.len()).sum()
    }

    fn check(&self) -> Result<(), String> {
        let lst = self.turns.iter().take_while(|t| t.success).count();
        if lst != self.lst {
            return Err(format!("dialogue {}: lst {} but outcomes give {lst}", self.id, self.lst));
        }
        let completed = lst + usize::from(self.turns.iter().any(|t| !t.success));
        if completed != self.completed_turns {
            return Err(format!(
                "dialogue {}: completed_turns {} but outcomes give {completed}",
                self.id, self.completed_turns
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown table {0} (expected 2, 4, 5 or 6)")]
    UnknownTable(String),
    #[error("lexicon keyword `{0}` appears in more than one category")]
    LexiconOverlap(String),
}

impl Corpus {
    pub fn from_logs(logs: &[GameLog]) -> Result<Corpus, AnalyticsError> {
        let mut dialogues = Vec::with_capacity(logs.len());
        for log in logs {
            let state = log.replay().map_err(|e| AnalyticsError::Schema { line: 0, message: e.to_string() })?;
            let turns = state
                .outcomes()
                .iter()
                .map(|o| DialogueTurn {
                    utterances: state.transcript().iter().filter(|u| u.turn == o.turn).map(|u| u.text.clone()).collect(),
                    success: o.success,
                    shared_count: Some(o.shared_count),
                    category: Some(o.category),
                })
                .collect();
            let last = log.wallclocks.last().copied().unwrap_or(log.started_at);
            dialogues.push(Dialogue {
                id: log.game_id.clone(),
                scenario_seed: Some(log.scenario.seed),
                turns,
                lst: state.lst(),
                completed_turns: state.completed_turns(),
                workers: vec![log.players.a.clone(), log.players.b.clone()],
                duration_minutes: Some(last.saturating_sub(log.started_at) as f64 / 60_000.0),
            });
        }
        Ok(Corpus { dialogues })
    }

    /// Parses the corpus JSON format, one dialogue object per line.
    pub fn from_json_lines(input: impl BufRead) -> Result<Corpus, AnalyticsError> {
        let mut dialogues = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: Dialogue = serde_json::from_str(&line)
                .map_err(|e| AnalyticsError::Schema { line: i + 1, message: e.to_string() })?;
            d.check().map_err(|message| AnalyticsError::Schema { line: i + 1, message })?;
            dialogues.push(d);
        }
        Ok(Corpus { dialogues })
    }

    pub fn to_json_lines(&self) -> String {
        self.dialogues.iter().map(|d| serde_json::to_string(d).expect("dialogues serialize") + "\n").collect()
    }

    fn require_nonempty(&self) -> Result<(), AnalyticsError> {
        if self.dialogues.is_empty() {
            Err(AnalyticsError::EmptyCorpus)
        } else {
            Ok(())
        }
    }

    fn utterances(&self) -> impl Iterator<Item = &String> {
        self.dialogues.iter().flat_map(|d| d.turns.iter().flat_map(|t| t.utterances.iter()))
    }
}

/// Maps an external corpus layout onto [`Corpus`].
pub trait CorpusAdapter {
    fn name(&self) -> &str;
    fn load(&self, path: &Path) -> Result<Corpus, AnalyticsError>;
}

/// Adapter for the corpus JSON-lines format (one [`Dialogue`] per line).
#[derive(Debug, Clone, Copy, Default)]
pub struct JsonLinesAdapter;

impl CorpusAdapter for JsonLinesAdapter {
    fn name(&self) -> &str {
        "corpus-jsonl"
    }

    fn load(&self, path: &Path) -> Result<Corpus, AnalyticsError> {
        Corpus::from_json_lines(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub enum Format<'a> {
    /// Game transcripts as written by the server and selfplay runner.
    Native,
    Adapter(&'a dyn CorpusAdapter),
}

pub fn ingest(path: &Path, format: Format<'_>) -> Result<Corpus, AnalyticsError> {
    match format {
        Format::Native => {
            let logs = read_games(std::io::BufReader::new(std::fs::File::open(path)?))?;
            Corpus::from_logs(&logs)
        }
        Format::Adapter(a) => a.load(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenModel {
    /// Tokens seen fewer times than this are rare.
    pub rare_threshold: u64,
}

impl Default for TokenModel {
    fn default() -> Self {
        TokenModel { rare_threshold: 10 }
    }
}

impl TokenModel {
    /// Lowercases and splits on anything that is not a letter or digit.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
    }

    fn frequencies(&self, c: &Corpus) -> BTreeMap<String, u64> {
        let mut freq = BTreeMap::new();
        for u in c.utterances() {
            for t in self.tokenize(u) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        freq
    }

    fn vocabulary(&self, c: &Corpus, drop_rare: bool) -> BTreeSet<String> {
        self.frequencies(c)
            .into_iter()
            .filter(|(_, n)| !drop_rare || *n >= self.rare_threshold)
            .map(|(t, _)| t)
            .collect()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallStats {
    pub total_dialogues: usize,
    pub utterances_per_dialogue: f64,
    pub tokens_per_utterance: f64,
    /// Mean over dialogues that record a duration.
    pub duration_per_dialogue_minutes: Option<f64>,
    pub unique_workers: Option<usize>,
    pub avg_lst: f64,
    pub avg_completed_turns: f64,
    pub unique_tokens: usize,
    /// Share of all token occurrences that belong to rare tokens, in percent.
    pub rare_token_occupancy_pct: f64,
}

pub fn overall_stats(c: &Corpus, tm: &TokenModel) -> Result<OverallStats, AnalyticsError> {
    c.require_nonempty()?;
    let n = c.dialogues.len() as f64;
    let utterances = c.utterances().count() as f64;
    let freq = tm.frequencies(c);
    let tokens: u64 = freq.values().sum();
    let rare: u64 = freq.values().filter(|n| **n < tm.rare_threshold).sum();
    let durations: Vec<f64> = c.dialogues.iter().filter_map(|d| d.duration_minutes).collect();
    let workers: BTreeSet<&String> = c.dialogues.iter().flat_map(|d| &d.workers).collect();
    Ok(OverallStats {
        total_dialogues: c.dialogues.len(),
        utterances_per_dialogue: utterances / n,
        tokens_per_utterance: ratio(tokens as f64, utterances),
        duration_per_dialogue_minutes: (!durations.is_empty())
            .then(|| durations.iter().sum::<f64>() / durations.len() as f64),
        unique_workers: (!workers.is_empty()).then_some(workers.len()),
        avg_lst: c.dialogues.iter().map(|d| d.lst).sum::<usize>() as f64 / n,
        avg_completed_turns: c.dialogues.iter().map(|d| d.completed_turns).sum::<usize>() as f64 / n,
        unique_tokens: freq.len(),
        rare_token_occupancy_pct: 100.0 * ratio(rare as f64, tokens as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    /// |Va ∩ Vb| / |Va ∪ Vb|, in percent. The headline figure.
    pub jaccard_pct: f64,
    /// |Va ∩ Vb| / |Va|, in percent.
    pub coverage_of_a_pct: f64,
    /// |Va ∩ Vb| / |Vb|, in percent.
    pub coverage_of_b_pct: f64,
}

pub fn vocab_overlap(a: &Corpus, b: &Corpus, tm: &TokenModel, drop_rare: bool) -> Result<Overlap, AnalyticsError> {
    a.require_nonempty()?;
    b.require_nonempty()?;
    let va = tm.vocabulary(a, drop_rare);
    let vb = tm.vocabulary(b, drop_rare);
    let both = va.intersection(&vb).count() as f64;
    let either = va.union(&vb).count() as f64;
    Ok(Overlap {
        jaccard_pct: 100.0 * ratio(both, either),
        coverage_of_a_pct: 100.0 * ratio(both, va.len() as f64),
        coverage_of_b_pct: 100.0 * ratio(both, vb.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModifierCategory {
    Diminishers,
    Moderators,
    Boosters,
    Approximators,
    Maximizers,
}

impl ModifierCategory {
    pub const ALL: [ModifierCategory; 5] = [
        ModifierCategory::Diminishers,
        ModifierCategory::Moderators,
        ModifierCategory::Boosters,
        ModifierCategory::Approximators,
        ModifierCategory::Maximizers,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModifierCategory::Diminishers => "diminishers",
            ModifierCategory::Moderators => "moderators",
            ModifierCategory::Boosters => "boosters",
            ModifierCategory::Approximators => "approximators",
            ModifierCategory::Maximizers => "maximizers",
        }
    }
}

/// Keyword lists per modifier category. Entries are one or two tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModifierLexicon {
    pub lists: BTreeMap<ModifierCategory, Vec<String>>,
}

const DIMINISHERS: [&str; 10] =
    ["a bit", "faintly", "slightly", "barely", "hardly", "marginally", "scarcely", "a tad", "mildly", "minimally"];
const MODERATORS: [&str; 6] = ["fairly", "rather", "somewhat", "quite", "moderately", "reasonably"];
const BOOSTERS: [&str; 27] = [
    "very", "really", "extraordinary", "extremely", "super", "incredibly", "highly", "especially", "particularly",
    "exceptionally", "awfully", "terribly", "remarkably", "hugely", "immensely", "intensely", "massively",
    "seriously", "significantly", "substantially", "considerably", "a lot", "by far", "tremendously", "insanely",
    "ridiculously", "unusually",
];
const APPROXIMATORS: [&str; 34] = [
    "almost", "maybe", "probably", "nearly", "roughly", "approximately", "possibly", "perhaps", "likely", "kind of",
    "sort of", "approx", "apparently", "seemingly", "presumably", "basically", "practically", "virtually",
    "essentially", "just about", "supposedly", "i think", "i guess", "i believe", "not sure", "might", "could be",
    "looks like", "seems", "seem", "kinda", "sorta", "unsure", "possible",
];
const MAXIMIZERS: [&str; 37] = [
    "exactly", "completely", "definitely", "perfectly", "totally", "absolutely", "entirely", "fully", "utterly",
    "wholly", "certainly", "surely", "precisely", "clearly", "obviously", "undoubtedly", "positively", "thoroughly",
    "altogether", "for sure", "no doubt", "without doubt", "directly", "purely", "strictly", "literally", "truly",
    "indeed", "100 percent", "dead on", "exact", "perfect", "absolute", "definite", "definitively", "unquestionably",
    "flawlessly",
];

impl ModifierLexicon {
    /// Default lists: 10 / 6 / 27 / 34 / 37 keywords. Polysemous words such
    /// as "little", "about" and "too" are left out.
    pub fn bundled() -> Self {
        let lists = [
            (ModifierCategory::Diminishers, &DIMINISHERS[..]),
            (ModifierCategory::Moderators, &MODERATORS[..]),
            (ModifierCategory::Boosters, &BOOSTERS[..]),
            (ModifierCategory::Approximators, &APPROXIMATORS[..]),
            (ModifierCategory::Maximizers, &MAXIMIZERS[..]),
        ]
        .into_iter()
        .map(|(c, words)| (c, words.iter().map(|w| w.to_string()).collect()))
        .collect();
        ModifierLexicon { lists }
    }

    pub fn empty() -> Self {
        ModifierLexicon::default()
    }

    /// Keyword to category, rejecting keywords listed twice.
    pub fn index(&self) -> Result<BTreeMap<String, ModifierCategory>, AnalyticsError> {
        let mut out = BTreeMap::new();
        for (cat, words) in &self.lists {
            for w in words {
                if out.insert(w.to_lowercase(), *cat).is_some() {
                    return Err(AnalyticsError::LexiconOverlap(w.clone()));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierRates {
    pub utterances: u64,
    pub counts: BTreeMap<ModifierCategory, u64>,
}

impl ModifierRates {
    pub fn per_100(&self, cat: ModifierCategory) -> f64 {
        100.0 * ratio(self.counts.get(&cat).copied().unwrap_or(0) as f64, self.utterances as f64)
    }
}

/// Counts keyword hits, trying the bigram at each position before the unigram.
pub fn count_modifiers(tokens: &[String], index: &BTreeMap<String, ModifierCategory>) -> BTreeMap<ModifierCategory, u64> {
    let mut counts: BTreeMap<ModifierCategory, u64> = ModifierCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() {
            if let Some(c) = index.get(&format!("{} {}", tokens[i], tokens[i + 1])) {
                *counts.get_mut(c).expect("all categories present") += 1;
                i += 2;
                continue;
            }
        }
        if let Some(c) = index.get(&tokens[i]) {
            *counts.get_mut(c).expect("all categories present") += 1;
        }
        i += 1;
    }
    counts
}

pub fn modifier_rates(c: &Corpus, lex: &ModifierLexicon, tm: &TokenModel) -> Result<ModifierRates, AnalyticsError> {
    let index = lex.index()?;
    let mut counts: BTreeMap<ModifierCategory, u64> = ModifierCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut utterances = 0;
    for u in c.utterances() {
        utterances += 1;
        for (cat, n) in count_modifiers(&tm.tokenize(u), &index) {
            *counts.get_mut(&cat).expect("all categories present") += n;
        }
    }
    Ok(ModifierRates { utterances, counts })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub success: BTreeMap<usize, Tally>,
    pub turns: u64,
    pub utterances: u64,
    pub tokens: u64,
}

impl CategoryRow {
    pub fn utterances_per_turn(&self) -> f64 {
        ratio(self.utterances as f64, self.turns as f64)
    }

    pub fn tokens_per_utterance(&self) -> f64 {
        ratio(self.tokens as f64, self.utterances as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnLevelStats {
    pub rows: BTreeMap<TurnCategory, CategoryRow>,
    /// Dialogues left out because a turn lacks its category or shared count.
    pub excluded_dialogues: usize,
}

impl TurnLevelStats {
    pub fn stay_leave_pct(&self) -> (f64, f64) {
        let count = |c| self.rows.get(&c).map_or(0, |r: &CategoryRow| r.turns) as f64;
        let (stay, leave) = (count(TurnCategory::LaterStay), count(TurnCategory::LaterLeave));
        (100.0 * ratio(stay, stay + leave), 100.0 * ratio(leave, stay + leave))
    }

    pub fn success(&self, cat: TurnCategory, shared: usize) -> Tally {
        self.rows.get(&cat).and_then(|r| r.success.get(&shared)).copied().unwrap_or_default()
    }
}

/// Success, length and stay/leave statistics per turn category. Failed
/// final turns are included.
pub fn turn_level_stats(c: &Corpus, tm: &TokenModel) -> TurnLevelStats {
    let mut out = TurnLevelStats::default();
    for d in &c.dialogues {
        if d.turns.iter().any(|t| t.category.is_none() || t.shared_count.is_none()) {
            out.excluded_dialogues += 1;
            continue;
        }
        for t in &d.turns {
            let row = out.rows.entry(t.category.expect("checked")).or_default();
            let cell = row.success.entry(t.shared_count.expect("checked")).or_default();
            cell.total += 1;
            cell.successes += u64::from(t.success);
            row.turns += 1;
            row.utterances += t.utterances.len() as u64;
            row.tokens += t.utterances.iter().map(|u| tm.tokenize(u).len() as u64).sum::<u64>();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatioTags {
    pub current_state: bool,
    pub state_change: bool,
    pub previous_state: bool,
}

const CHANGE_STEMS: [&str; 24] = [
    "mov", "travel", "head", "curv", "turn", "drift", "float", "slid", "cross", "approach", "collid", "zoom",
    "speed", "fast", "quick", "slow", "went", "goes", "going", "bounc", "toward", "zip", "crawl", "swerv",
];
const PREVIOUS_WORDS: [&str; 11] =
    ["was", "were", "started", "before", "previous", "previously", "earlier", "originally", "began", "last", "used"];
const CURRENT_WORDS: [&str; 13] =
    ["now", "ends", "ended", "ending", "lands", "landed", "stops", "stopped", "final", "finally", "currently", "end", "stays"];

/// Keyword heuristic for spatio-temporal content. An aid for browsing
/// transcripts, not a substitute for manual annotation.
pub fn tag_spatiotemporal(utterance: &str, tm: &TokenModel) -> SpatioTags {
    let tokens = tm.tokenize(utterance);
    let mut tags = SpatioTags::default();
    for (i, t) in tokens.iter().enumerate() {
        let after_started = i > 0 && tokens[i - 1] == "started";
        if CHANGE_STEMS.iter().any(|s| t.starts_with(s)) {
            tags.state_change = true;
        }
        if PREVIOUS_WORDS.contains(&t.as_str()) && !after_started {
            tags.previous_state = true;
        }
        if CURRENT_WORDS.contains(&t.as_str()) {
            tags.current_state = true;
        }
    }
    tags
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn tally_cell(t: Option<&Tally>) -> String {
    match t.and_then(|t| t.rate().map(|r| (r, t))) {
        Some((r, t)) => format!("{:.2} ({}/{})", 100.0 * r, t.successes, t.total),
        None => "-".into(),
    }
}

impl OverallStats {
    pub fn to_tsv(&self, overlap: Option<(Overlap, Overlap)>) -> String {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), fmt2);
        let mut s = String::from("statistic\tvalue\n");
        let rows = [
            ("total_dialogues", self.total_dialogues.to_string()),
            ("utterances_per_dialogue", fmt2(self.utterances_per_dialogue)),
            ("tokens_per_utterance", fmt2(self.tokens_per_utterance)),
            ("duration_per_dialogue_minutes", opt(self.duration_per_dialogue_minutes)),
            ("unique_workers", self.unique_workers.map_or("-".into(), |n| n.to_string())),
            ("avg_lst", fmt2(self.avg_lst)),
            ("avg_completed_turns", fmt2(self.avg_completed_turns)),
            ("unique_tokens", self.unique_tokens.to_string()),
            ("rare_token_occupancy_pct", fmt2(self.rare_token_occupancy_pct)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}\t{v}");
        }
        if let Some((all, common)) = overlap {
            let _ = writeln!(s, "overlap_all_tokens_pct\t{}", fmt2(all.jaccard_pct));
            let _ = writeln!(s, "overlap_without_rare_pct\t{}", fmt2(common.jaccard_pct));
            let _ = writeln!(s, "coverage_of_this_corpus_pct\t{}", fmt2(all.coverage_of_a_pct));
            let _ = writeln!(s, "coverage_of_other_corpus_pct\t{}", fmt2(all.coverage_of_b_pct));
        }
        s
    }
}

impl ModifierRates {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("category\tcount\tper_100_utterances\n");
        for c in ModifierCategory::ALL {
            let _ = writeln!(s, "{}\t{}\t{}", c.label(), self.counts.get(&c).copied().unwrap_or(0), fmt2(self.per_100(c)));
        }
        s
    }
}

impl TurnLevelStats {
    /// Success rates with utterance and token lengths per turn category.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "turn\tprevious_target\tshared=4\tshared=5\tshared=6\tutterances_per_turn\ttokens_per_utterance\n",
        );
        for cat in TurnCategory::ALL {
            let (turn, prev) = match cat {
                TurnCategory::First => ("1st", "-"),
                TurnCategory::LaterStay => (">=2nd", "stay"),
                TurnCategory::LaterLeave => (">=2nd", "leave"),
            };
            let row = self.rows.get(&cat).cloned().unwrap_or_default();
            let cells: Vec<String> = [4, 5, 6].iter().map(|k| tally_cell(row.success.get(k))).collect();
            let _ = writeln!(
                s,
                "{turn}\t{prev}\t{}\t{}\t{}",
                cells.join("\t"),
                fmt2(row.utterances_per_turn()),
                fmt2(row.tokens_per_utterance())
            );
        }
        s
    }

    /// How often the previous target stays in common, among later turns.
    pub fn stay_leave_tsv(&self) -> String {
        let (stay, leave) = self.stay_leave_pct();
        let turns = |c| self.rows.get(&c).map_or(0, |r: &CategoryRow| r.turns);
        format!(
            "previous_target\tturns\tfreq_pct\nstay\t{}\t{}\nleave\t{}\t{}\n",
            turns(TurnCategory::LaterStay),
            fmt2(stay),
            turns(TurnCategory::LaterLeave),
            fmt2(leave)
        )
    }
}

/// Which report files to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Table {
    Overall,
    Modifiers,
    StayLeave,
    TurnLevel,
}

impl Table {
    pub fn number(self) -> u8 {
        match self {
            Table::Overall => 2,
            Table::Modifiers => 4,
            Table::StayLeave => 5,
            Table::TurnLevel => 6,
        }
    }
}

/// Parses a selector such as `2,4,5,6`.
pub fn parse_tables(spec: &str) -> Result<Vec<Table>, AnalyticsError> {
    let mut out = BTreeSet::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        out.insert(match part {
            "2" => Table::Overall,
            "4" => Table::Modifiers,
            "5" => Table::StayLeave,
            "6" => Table::TurnLevel,
            other => return Err(AnalyticsError::UnknownTable(other.into())),
        });
    }
    Ok(out.into_iter().collect())
}

/// A rendered report: file stem, TSV text, JSON text.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub stem: String,
    pub tsv: String,
    pub json: String,
}

pub struct ReportInputs<'a> {
    pub corpus: &'a Corpus,
    pub compare: Option<&'a Corpus>,
    pub token_model: TokenModel,
    pub lexicon: &'a ModifierLexicon,
}

pub fn render_tables(inputs: &ReportInputs<'_>, tables: &[Table]) -> Result<Vec<RenderedTable>, AnalyticsError> {
    let tm = &inputs.token_model;
    let json = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("values serialize") + "\n";
    let mut out = Vec::new();
    let turn_level = turn_level_stats(inputs.corpus, tm);
    for t in tables {
        let stem = format!("table{}", t.number());
        let rendered = match t {
            Table::Overall => {
                let stats = overall_stats(inputs.corpus, tm)?;
                let overlap = match inputs.compare {
                    Some(other) => Some((
                        vocab_overlap(inputs.corpus, other, tm, false)?,
                        vocab_overlap(inputs.corpus, other, tm, true)?,
                    )),
                    None => None,
                };
                let v = serde_json::json!({ "stats": stats, "overlap_all": overlap.map(|o| o.0), "overlap_without_rare": overlap.map(|o| o.1) });
                RenderedTable { stem, tsv: stats.to_tsv(overlap), json: json(v) }
            }
            Table::Modifiers => {
                let rates = modifier_rates(inputs.corpus, inputs.lexicon, tm)?;
                let per_100: BTreeMap<_, _> = ModifierCategory::ALL.iter().map(|c| (*c, rates.per_100(*c))).collect();
                let v = serde_json::json!({ "utterances": rates.utterances, "counts": rates.counts, "per_100_utterances": per_100 });
                RenderedTable { stem, tsv: rates.to_tsv(), json: json(v) }
            }
            Table::StayLeave => {
                let (stay, leave) = turn_level.stay_leave_pct();
                let v = serde_json::json!({ "stay_pct": stay, "leave_pct": leave, "excluded_dialogues": turn_level.excluded_dialogues });
                RenderedTable { stem, tsv: turn_level.stay_leave_tsv(), json: json(v) }
            }
            Table::TurnLevel => {
                RenderedTable { stem, tsv: turn_level.to_tsv(), json: json(serde_json::to_value(&turn_level).expect("serializes")) }
            }
        };
        out.push(rendered);
    }
    Ok(out)
}

/// Writes `<stem>.tsv` and `<stem>.json` for each table into `dir`.
pub fn write_reports(dir: &Path, rendered: &[RenderedTable]) -> Result<(), AnalyticsError> {
    std::fs::create_dir_all(dir)?;
    for r in rendered {
        std::fs::write(dir.join(format!("{}.tsv", r.stem)), &r.tsv)?;
        std::fs::write(dir.join(format!("{}.json", r.stem)), &r.json)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(utts: &[&str], success: bool, shared: usize, cat: TurnCategory) -> DialogueTurn {
        DialogueTurn {
            utterances: utts.iter().map(|s| s.to_string()).collect(),
            success,
            shared_count: Some(shared),
            category: Some(cat),
        }
    }

    fn dialogue(id: &str, turns: Vec<DialogueTurn>) -> Dialogue {
        let lst = turns.iter().take_while(|t| t.success).count();
        let completed = lst + usize::from(turns.iter().any(|t| !t.success));
        Dialogue { id: id.into(), scenario_seed: None, turns, lst, completed_turns: completed, workers: vec![], duration_minutes: None }
    }

    #[test]
    fn tokenizer_drops_punctuation() {
        let tm = TokenModel::default();
        assert_eq!(tm.tokenize("Same here!  It's the DARK one..."), ["same", "here", "it", "s", "the", "dark", "one"]);
        assert!(tm.tokenize("?!").is_empty());
    }

    #[test]
    fn bundled_lexicon_sizes_and_disjointness() {
        let lex = ModifierLexicon::bundled();
        let sizes: Vec<usize> = ModifierCategory::ALL.iter().map(|c| lex.lists[c].len()).collect();
        assert_eq!(sizes, [10, 6, 27, 34, 37]);
        assert_eq!(lex.index().unwrap().len(), 114);
        for w in lex.lists.values().flatten() {
            assert!(w.split(' ').count() <= 2, "{w}");
            for banned in ["little", "about", "too"] {
                assert_ne!(w, banned);
            }
        }
    }

    #[test]
    fn overlapping_lexicon_rejected() {
        let mut lex = ModifierLexicon::empty();
        lex.lists.insert(ModifierCategory::Boosters, vec!["very".into()]);
        lex.lists.insert(ModifierCategory::Maximizers, vec!["very".into()]);
        assert!(matches!(lex.index(), Err(AnalyticsError::LexiconOverlap(_))));
    }

    #[test]
    fn slightly_curves_up_is_one_diminisher() {
        let c = Corpus { dialogues: vec![dialogue("x", vec![turn(&["slightly curves up"], true, 4, TurnCategory::First)])] };
        let r = modifier_rates(&c, &ModifierLexicon::bundled(), &TokenModel::default()).unwrap();
        assert_eq!(r.counts[&ModifierCategory::Diminishers], 1);
        assert_eq!(r.counts.values().sum::<u64>(), 1);
    }

    #[test]
    fn bigrams_win_over_unigrams() {
        let mut lex = ModifierLexicon::empty();
        lex.lists.insert(ModifierCategory::Approximators, vec!["kind of".into()]);
        lex.lists.insert(ModifierCategory::Boosters, vec!["kind".into(), "of".into()]);
        let idx = lex.index().unwrap();
        let tm = TokenModel::default();
        let counts = count_modifiers(&tm.tokenize("kind of kind"), &idx);
        assert_eq!(counts[&ModifierCategory::Approximators], 1);
        assert_eq!(counts[&ModifierCategory::Boosters], 1);
    }

    #[test]
    fn empty_lexicon_counts_nothing() {
        let c = Corpus { dialogues: vec![dialogue("x", vec![turn(&["very very slightly"], true, 4, TurnCategory::First)])] };
        let r = modifier_rates(&c, &ModifierLexicon::empty(), &TokenModel::default()).unwrap();
        assert!(r.counts.values().all(|n| *n == 0));
    }

    #[test]
    fn tagger_examples() {
        let tm = TokenModel::default();
        assert_eq!(tag_spatiotemporal("moves very quickly", &tm), SpatioTags { state_change: true, ..Default::default() });
        assert!(tag_spatiotemporal("started out below it", &tm).previous_state);
        assert_eq!(tag_spatiotemporal("hello", &tm), SpatioTags::default());
        assert!(tag_spatiotemporal("it now ends at the top", &tm).current_state);
    }

    #[test]
    fn single_perfect_dialogue() {
        let turns = (0..5)
            .map(|k| turn(&["same"], true, 5, if k == 0 { TurnCategory::First } else { TurnCategory::LaterStay }))
            .collect();
        let c = Corpus { dialogues: vec![dialogue("p", turns)] };
        let s = overall_stats(&c, &TokenModel::default()).unwrap();
        assert_eq!(s.avg_lst, 5.0);
        assert_eq!(s.avg_completed_turns, 5.0);
        let t = turn_level_stats(&c, &TokenModel::default());
        assert_eq!(t.success(TurnCategory::LaterStay, 5), Tally { successes: 4, total: 4 });
    }

    #[test]
    fn empty_corpus_errors() {
        let tm = TokenModel::default();
        assert!(matches!(overall_stats(&Corpus::default(), &tm), Err(AnalyticsError::EmptyCorpus)));
        let one = Corpus { dialogues: vec![dialogue("x", vec![turn(&["a"], false, 4, TurnCategory::First)])] };
        assert!(matches!(vocab_overlap(&one, &Corpus::default(), &tm, false), Err(AnalyticsError::EmptyCorpus)));
    }

    #[test]
    fn overlap_extremes() {
        let tm = TokenModel { rare_threshold: 1 };
        let a = Corpus { dialogues: vec![dialogue("a", vec![turn(&["red dot"], true, 4, TurnCategory::First)])] };
        let b = Corpus { dialogues: vec![dialogue("b", vec![turn(&["blue ring"], true, 4, TurnCategory::First)])] };
        assert_eq!(vocab_overlap(&a, &a, &tm, false).unwrap().jaccard_pct, 100.0);
        assert_eq!(vocab_overlap(&a, &b, &tm, false).unwrap().jaccard_pct, 0.0);
    }

    #[test]
    fn missing_categories_are_excluded() {
        let mut d = dialogue("x", vec![turn(&["a"], true, 4, TurnCategory::First)]);
        d.turns[0].category = None;
        let c = Corpus { dialogues: vec![d] };
        let t = turn_level_stats(&c, &TokenModel::default());
        assert_eq!(t.excluded_dialogues, 1);
        assert!(t.rows.is_empty());
    }

    #[test]
    fn inconsistent_lst_names_line() {
        let mut d = dialogue("x", vec![turn(&["a"], true, 4, TurnCategory::First)]);
        d.lst = 3;
        let text = format!("\n{}\n", serde_json::to_string(&d).unwrap());
        match Corpus::from_json_lines(text.as_bytes()) {
            Err(AnalyticsError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_selector() {
        assert_eq!(parse_tables("6,2").unwrap(), [Table::Overall, Table::TurnLevel]);
        assert!(matches!(parse_tables("3"), Err(AnalyticsError::UnknownTable(_))));
    }
}
