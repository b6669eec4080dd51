//! Part-of-speech tagging of search queries and their partition into memory
//! seeds: subjects, actions, temporal markers and degree modifiers.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::Query;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("cannot tag an empty query")]
    EmptyQuery,
    #[error("external tagger failed: {0}")]
    External(String),
    #[error("malformed tagger output at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Pronoun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl Pos {
    /// Maps a Universal Dependencies UPOS tag onto the internal classes.
    pub fn from_upos(tag: &str) -> Pos {
        match tag.trim().to_ascii_uppercase().as_str() {
            "NOUN" | "PROPN" | "NUM" => Pos::Noun,
            "PRON" => Pos::Pronoun,
            "VERB" => Pos::Verb,
            "ADJ" => Pos::Adj,
            "ADV" => Pos::Adv,
            _ => Pos::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: Pos,
    pub index: usize,
}

pub trait PosTagger: Send + Sync {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<Pos>, TagError>;
}

/// Tags every token of the query.
pub fn tag(query: &Query, tagger: &dyn PosTagger) -> Result<Vec<TaggedToken>, TagError> {
    let tokens = query.tokens();
    if tokens.is_empty() {
        return Err(TagError::EmptyQuery);
    }
    let tags = tagger.tag_tokens(&tokens)?;
    if tags.len() != tokens.len() {
        return Err(TagError::External(format!(
            "tagger returned {} tags for {} tokens",
            tags.len(),
            tokens.len()
        )));
    }
    Ok(tokens
        .into_iter()
        .zip(tags)
        .enumerate()
        .map(|(index, (surface, pos))| TaggedToken { surface, pos, index })
        .collect())
}

const PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself", "yourselves", "he",
    "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "we", "us",
    "our", "ours", "ourselves", "they", "them", "their", "theirs", "themselves", "who", "whom",
    "what", "someone", "somebody", "anyone", "anybody", "everyone", "everybody", "something",
    "anything", "everything", "nothing", "nobody",
];

const FUNCTION_WORDS: &[&str] = &[
    // determiners
    "a", "an", "the", "this", "that", "these", "those", "which", "whose", "each", "every", "some",
    "any", "no", "all", "both", "either", "neither", "another",
    // prepositions
    "of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "into",
    "through", "during", "before", "after", "above", "below", "to", "from", "up", "down", "over",
    "under", "since", "until", "within", "without", "among", "across", "behind", "beyond", "near",
    "via", "per", "upon", "onto", "toward", "towards", "than", "as",
    // conjunctions and particles
    "and", "or", "but", "nor", "so", "yet", "if", "because", "while", "whereas", "although",
    "though", "whether", "not", "when", "where", "why", "how",
    // auxiliaries and modals
    "is", "am", "are", "was", "were", "be", "been", "being", "do", "does", "did", "have", "has",
    "had", "having", "will", "would", "shall", "should", "can", "could", "may", "might", "must",
];

const INFLECTION_HOSTS: &[&str] = &[
    "act", "add", "begin", "get", "run", "sit", "swim", "appear", "arrive", "ask", "attack", "award", "base", "believe", "belong",
    "build", "call", "cause", "change", "claim", "close", "compose", "connect", "contain",
    "create", "cross", "decide", "defeat", "describe", "design", "destroy", "develop", "die",
    "direct", "discover", "establish", "expand", "explain", "feature", "finish", "follow",
    "form", "found", "graduate", "happen", "help", "host", "include", "introduce", "invent",
    "join", "kill", "land", "last", "launch", "lead", "live", "locate", "look", "manage",
    "marry", "move", "name", "need", "nominate", "occur", "open", "operate", "own", "perform",
    "place", "plan", "play", "produce", "publish", "reach", "receive", "record", "release",
    "remain", "replace", "report", "represent", "retire", "return", "score", "serve", "settle",
    "sign", "start", "star", "stop", "study", "succeed", "support", "surround", "talk", "train",
    "travel", "try", "turn", "use", "visit", "voice", "vote", "walk", "want", "watch", "win",
    "work", "write",
];

const VERB_FORMS: &[&str] = &[
    // irregular past and participle forms
    "ran", "run", "began", "begun", "became", "born", "bought", "brought", "built", "came",
    "caught", "chose", "chosen", "did", "done", "drew", "drawn", "drove", "driven", "ate",
    "eaten", "fell", "fallen", "felt", "fought", "found", "flew", "flown", "forgot", "gave",
    "given", "went", "gone", "grew", "grown", "held", "hid", "kept", "knew", "known", "led",
    "left", "lost", "made", "meant", "met", "paid", "put", "read", "rode", "rose", "said", "saw",
    "seen", "sold", "sent", "set", "shot", "showed", "shown", "sang", "sung", "sat", "slept",
    "spoke", "spoken", "spent", "stood", "stole", "struck", "swam", "taught", "told", "thought",
    "threw", "thrown", "took", "taken", "understood", "woke", "wore", "won", "wrote", "written",
    // base forms rarely used as nouns
    "become", "begin", "bring", "buy", "choose", "create", "develop", "die", "directed",
    "discover", "eat", "fight", "find", "get", "give", "go", "grow", "hold", "include", "invent",
    "know", "leave", "lose", "make", "marry", "meet", "pay", "produce", "receive", "say", "see",
    "sell", "send", "sing", "speak", "take", "teach", "tell", "think", "throw", "write",
];

const ADJECTIVES: &[&str] = &[
    "big", "small", "large", "little", "long", "short", "high", "low", "old", "new", "young",
    "good", "bad", "best", "worst", "better", "worse", "great", "first", "last", "early", "late",
    "fast", "slow", "red", "blue", "green", "black", "white", "yellow", "hot", "cold", "many",
    "much", "few", "more", "most", "less", "least", "same", "different", "main", "major",
    "minor", "famous", "popular", "real", "true", "false", "whole", "full", "empty", "rich",
    "poor", "strong", "weak", "hard", "easy", "top", "former", "original", "current", "final",
    "total", "only", "other", "own", "similar", "older", "younger", "larger", "largest",
    "smallest", "biggest", "longest", "highest", "oldest", "newest", "earliest", "latest",
];

const ADVERBS: &[&str] = &[
    "very", "too", "quite", "rather", "also", "still", "already", "just", "even", "almost",
    "never", "always", "often", "sometimes", "again", "soon", "now", "then", "here", "there",
    "together", "ever", "once", "twice", "well",
];

const LY_NOUNS: &[&str] = &[
    "family", "italy", "july", "supply", "reply", "assembly", "ally", "belly", "fly", "rally",
    "lily", "emily", "sally", "molly", "kelly", "holly", "bully", "anomaly", "monopoly",
    "butterfly", "jelly", "apply", "rely", "comply", "imply", "multiply",
];

const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "less", "able", "ible", "ive", "ish"];

fn in_list(list: &[&str], word: &str) -> bool {
    list.contains(&word)
}

fn inflected_from_known_stem(word: &str) -> bool {
    let candidates = |stem: &str| -> bool {
        if in_list(INFLECTION_HOSTS, stem) {
            return true;
        }
        // voiced -> voice, moving -> move
        if in_list(INFLECTION_HOSTS, &format!("{stem}e")) {
            return true;
        }
        // running -> run, planned -> plan
        let bytes = stem.as_bytes();
        if bytes.len() >= 2 && bytes[bytes.len() - 1] == bytes[bytes.len() - 2] {
            return in_list(INFLECTION_HOSTS, &stem[..stem.len() - 1]);
        }
        // studied -> study
        if let Some(base) = stem.strip_suffix('i') {
            return in_list(INFLECTION_HOSTS, &format!("{base}y"));
        }
        false
    };
    if let Some(stem) = word.strip_suffix("ing") {
        return !stem.is_empty() && candidates(stem);
    }
    if let Some(stem) = word.strip_suffix("ed") {
        return !stem.is_empty() && candidates(stem);
    }
    false
}

/// Deterministic lexicon-and-suffix tagger.
///
/// Closed-class words come from fixed lists, digit tokens are nouns, `-ly`
/// words are adverbs, `-ed`/`-ing` forms of known verb stems are verbs, and
/// anything else open-class defaults to noun.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTagger;

impl RuleTagger {
    pub fn tag_word(&self, surface: &str) -> Pos {
        let first = match surface.chars().next() {
            Some(c) => c,
            None => return Pos::Other,
        };
        if surface.chars().all(|c| c.is_ascii_digit()) {
            return Pos::Noun;
        }
        if !first.is_alphanumeric() {
            return Pos::Other;
        }
        let word = surface.to_lowercase();
        let w = word.as_str();
        if in_list(PRONOUNS, w) {
            return Pos::Pronoun;
        }
        if in_list(FUNCTION_WORDS, w) {
            return Pos::Other;
        }
        if first.is_uppercase() && !in_list(VERB_FORMS, w) {
            // capitalized open-class words are treated as names
            return Pos::Noun;
        }
        if in_list(ADVERBS, w) {
            return Pos::Adv;
        }
        if in_list(ADJECTIVES, w) {
            return Pos::Adj;
        }
        if in_list(VERB_FORMS, w) || inflected_from_known_stem(w) {
            return Pos::Verb;
        }
        if w.len() > 3 && w.ends_with("ly") && !in_list(LY_NOUNS, w) {
            return Pos::Adv;
        }
        if w.len() > 5 && ADJ_SUFFIXES.iter().any(|s| w.ends_with(s)) {
            return Pos::Adj;
        }
        if w.len() > 4 && (w.ends_with("ize") || w.ends_with("ise") || w.ends_with("ify")) {
            return Pos::Verb;
        }
        Pos::Noun
    }
}

impl PosTagger for RuleTagger {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<Pos>, TagError> {
        Ok(tokens.iter().map(|t| self.tag_word(t)).collect())
    }
}

/// Parses `surface<TAB>UPOS` lines; blank lines are skipped.
pub fn parse_upos_lines(text: &str) -> Result<Vec<TaggedToken>, TagError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (surface, upos) = line.split_once('\t').ok_or_else(|| TagError::Malformed {
            line: i + 1,
            message: "expected `surface<TAB>UPOS`".into(),
        })?;
        out.push(TaggedToken {
            surface: surface.to_string(),
            pos: Pos::from_upos(upos),
            index: out.len(),
        });
    }
    Ok(out)
}

/// Runs an external program that reads one token per line on stdin and
/// prints `surface<TAB>UPOS` lines on stdout.
#[derive(Debug, Clone)]
pub struct ExternalTagger {
    pub program: String,
    pub args: Vec<String>,
}

impl PosTagger for ExternalTagger {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<Pos>, TagError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TagError::External(format!("{}: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            for token in tokens {
                writeln!(stdin, "{token}").map_err(|e| TagError::External(e.to_string()))?;
            }
        }
        let output = child
            .wait_with_output()
            .map_err(|e| TagError::External(e.to_string()))?;
        if !output.status.success() {
            return Err(TagError::External(format!("{} exited with {}", self.program, output.status)));
        }
        let tagged = parse_upos_lines(&String::from_utf8_lossy(&output.stdout))?;
        Ok(tagged.into_iter().map(|t| t.pos).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedCategory {
    Subjects,
    Actions,
    TemporalMarkers,
    DegreeModifiers,
}

impl SeedCategory {
    pub const ALL: [SeedCategory; 4] = [
        SeedCategory::Subjects,
        SeedCategory::Actions,
        SeedCategory::TemporalMarkers,
        SeedCategory::DegreeModifiers,
    ];

    /// Label used in prompts and in fragment lines.
    pub fn label(self) -> &'static str {
        match self {
            SeedCategory::Subjects => "subjects",
            SeedCategory::Actions => "actions",
            SeedCategory::TemporalMarkers => "temporal markers",
            SeedCategory::DegreeModifiers => "degree modifiers",
        }
    }
}

impl fmt::Display for SeedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub query_round: u32,
    /// Only non-empty categories are present.
    pub seeds: BTreeMap<SeedCategory, Vec<String>>,
}

impl SeedSet {
    /// Number of non-empty categories.
    pub fn l_r(&self) -> usize {
        self.seeds.values().filter(|v| !v.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.l_r() == 0
    }

    pub fn get(&self, category: SeedCategory) -> &[String] {
        self.seeds.get(&category).map_or(&[], Vec::as_slice)
    }
}

const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const WEEKDAYS: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const DURATIONS: &[&str] = &[
    "year", "years", "month", "months", "week", "weeks", "day", "days", "decade", "decades",
    "century", "centuries", "today", "yesterday", "tomorrow",
];

pub fn is_temporal(surface: &str) -> bool {
    if surface.len() == 4 && surface.chars().all(|c| c.is_ascii_digit()) {
        let year: u32 = surface.parse().unwrap();
        return (1000..=2999).contains(&year);
    }
    let w = surface.to_lowercase();
    in_list(MONTHS, &w) || in_list(WEEKDAYS, &w) || in_list(DURATIONS, &w)
}

/// Routes tagged tokens into seed categories, keeping query order.
pub fn build_seeds(tagged: &[TaggedToken], query_round: u32) -> SeedSet {
    let mut seeds: BTreeMap<SeedCategory, Vec<String>> = BTreeMap::new();
    for token in tagged {
        let category = match token.pos {
            Pos::Noun | Pos::Pronoun if is_temporal(&token.surface) => SeedCategory::TemporalMarkers,
            Pos::Noun | Pos::Pronoun => SeedCategory::Subjects,
            Pos::Verb => SeedCategory::Actions,
            Pos::Adj | Pos::Adv => SeedCategory::DegreeModifiers,
            Pos::Other => continue,
        };
        seeds.entry(category).or_default().push(token.surface.clone());
    }
    SeedSet { query_round, seeds }
}

/// Tags and partitions a query in one step.
pub fn extract_seeds(query: &Query, tagger: &dyn PosTagger) -> Result<SeedSet, TagError> {
    Ok(build_seeds(&tag(query, tagger)?, query.round()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(text: &str) -> Vec<(String, Pos)> {
        tag(&Query::original(text), &RuleTagger)
            .unwrap()
            .into_iter()
            .map(|t| (t.surface, t.pos))
            .collect()
    }

    fn seeds(text: &str) -> SeedSet {
        extract_seeds(&Query::search(text, 1), &RuleTagger).unwrap()
    }

    #[test]
    fn tags_simple_sentence() {
        assert_eq!(
            tags("she quickly ran"),
            vec![
                ("she".into(), Pos::Pronoun),
                ("quickly".into(), Pos::Adv),
                ("ran".into(), Pos::Verb)
            ]
        );
        assert_eq!(tags("1999"), vec![("1999".into(), Pos::Noun)]);
    }

    #[test]
    fn empty_query_rejected() {
        assert!(matches!(tag(&Query::original(""), &RuleTagger), Err(TagError::EmptyQuery)));
    }

    #[test]
    fn routes_categories() {
        let s = seeds("she quickly ran home in 1999");
        assert_eq!(s.get(SeedCategory::Subjects), ["she", "home"]);
        assert_eq!(s.get(SeedCategory::Actions), ["ran"]);
        assert_eq!(s.get(SeedCategory::DegreeModifiers), ["quickly"]);
        assert_eq!(s.get(SeedCategory::TemporalMarkers), ["1999"]);
        assert_eq!(s.l_r(), 4);
        assert_eq!(s.query_round, 1);
    }

    #[test]
    fn stop_words_give_empty_seed_set() {
        let s = seeds("of the and");
        assert!(s.is_empty());
        assert_eq!(s.l_r(), 0);
    }

    #[test]
    fn single_category_input() {
        let s = seeds("big red fast");
        assert_eq!(s.get(SeedCategory::DegreeModifiers), ["big", "red", "fast"]);
        assert_eq!(s.l_r(), 1);
    }

    #[test]
    fn inflection_rules() {
        let t = RuleTagger;
        assert_eq!(t.tag_word("developed"), Pos::Verb);
        assert_eq!(t.tag_word("voiced"), Pos::Verb);
        assert_eq!(t.tag_word("running"), Pos::Verb);
        assert_eq!(t.tag_word("studied"), Pos::Verb);
        assert_eq!(t.tag_word("family"), Pos::Noun);
        assert_eq!(t.tag_word("voice"), Pos::Noun);
        assert_eq!(t.tag_word("famous"), Pos::Adj);
        assert_eq!(t.tag_word("Croft"), Pos::Noun);
        assert_eq!(t.tag_word("?"), Pos::Other);
    }

    #[test]
    fn temporal_lexicon() {
        assert!(is_temporal("1999"));
        assert!(is_temporal("March"));
        assert!(is_temporal("decade"));
        assert!(!is_temporal("3000"));
        assert!(!is_temporal("999"));
        let s = seeds("Which year did the war end");
        assert_eq!(s.get(SeedCategory::TemporalMarkers), ["year"]);
    }

    #[test]
    fn upos_adapter() {
        let tagged = parse_upos_lines("Lara\tPROPN\nran\tVERB\n\nis\tAUX\nthey\tPRON\n").unwrap();
        let pos: Vec<_> = tagged.iter().map(|t| t.pos).collect();
        assert_eq!(pos, vec![Pos::Noun, Pos::Verb, Pos::Other, Pos::Pronoun]);
        assert_eq!(tagged.iter().map(|t| t.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(matches!(parse_upos_lines("nope"), Err(TagError::Malformed { line: 1, .. })));
    }

    #[test]
    fn external_tagger_via_shell() {
        let tagger = ExternalTagger {
            program: "sh".into(),
            args: vec!["-c".into(), "while read t; do printf '%s\\tNOUN\\n' \"$t\"; done".into()],
        };
        let tagged = tag(&Query::original("a b"), &tagger).unwrap();
        assert!(tagged.iter().all(|t| t.pos == Pos::Noun));
    }
}
