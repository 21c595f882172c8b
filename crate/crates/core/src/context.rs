//! Trigger-cue context classification: decides whether a mention is negated,
//! uncertain, family-related, or affirmed, using pre/post cues with a token
//! window and scope terminators.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CueCategory {
    Negation,
    Uncertainty,
    Family,
}

/// A pseudo cue neutralizes triggers of its category at the same position
/// ("no increase" keeps "no" from firing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CueKind {
    Trigger(CueCategory),
    Pseudo(CueCategory),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CueDirection {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextCue {
    /// Lowercased phrase tokens.
    pub phrase: Vec<String>,
    pub kind: CueKind,
    pub direction: CueDirection,
    /// Max tokens between cue and mention.
    pub window: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MentionContext {
    pub negated: bool,
    pub uncertain: bool,
    pub family: bool,
    pub triggering_cue: Option<ContextCue>,
}

impl MentionContext {
    pub fn affirmed(&self) -> bool {
        !self.negated && !self.uncertain && !self.family
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed cue line {line} in {path}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate cue phrase {phrase:?} in category {category} (line {line})")]
    DuplicatePhrase {
        phrase: String,
        category: String,
        line: usize,
    },
    #[error("mention token span {start}..{end} outside sentence with {len} tokens")]
    MentionOutsideSentence {
        start: usize,
        end: usize,
        len: usize,
    },
}

fn parse_kind(s: &str) -> Option<CueKind> {
    match s {
        "negation" => Some(CueKind::Trigger(CueCategory::Negation)),
        "uncertainty" => Some(CueKind::Trigger(CueCategory::Uncertainty)),
        "family" => Some(CueKind::Trigger(CueCategory::Family)),
        "pseudo-negation" => Some(CueKind::Pseudo(CueCategory::Negation)),
        "pseudo-uncertainty" => Some(CueKind::Pseudo(CueCategory::Uncertainty)),
        "pseudo-family" => Some(CueKind::Pseudo(CueCategory::Family)),
        _ => None,
    }
}

/// Loads a cue lexicon from `<category>\t<direction>\t<window>\t<phrase>` lines.
pub fn load_cues(path: &Path) -> Result<Vec<ContextCue>, ContextError> {
    let text = std::fs::read_to_string(path).map_err(|e| ContextError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_cues(&text, &path.display().to_string())
}

pub fn parse_cues(text: &str, source_name: &str) -> Result<Vec<ContextCue>, ContextError> {
    let mut cues = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(ContextError::MalformedLine {
                path: source_name.to_string(),
                line: line_no,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let kind = parse_kind(fields[0]).ok_or_else(|| ContextError::MalformedLine {
            path: source_name.to_string(),
            line: line_no,
            reason: format!("unknown category {:?}", fields[0]),
        })?;
        let direction = match fields[1] {
            "pre" => CueDirection::Pre,
            "post" => CueDirection::Post,
            other => {
                return Err(ContextError::MalformedLine {
                    path: source_name.to_string(),
                    line: line_no,
                    reason: format!("unknown direction {other:?}"),
                })
            }
        };
        let window: usize = fields[2].parse().map_err(|_| ContextError::MalformedLine {
            path: source_name.to_string(),
            line: line_no,
            reason: format!("bad window {:?}", fields[2]),
        })?;
        // Tokenized like corpus text, so cues align with sentence tokens.
        let phrase: Vec<String> = crate::corpus::tokenize(fields[3])
            .into_iter()
            .map(|t| t.lower)
            .collect();
        if phrase.is_empty() {
            return Err(ContextError::MalformedLine {
                path: source_name.to_string(),
                line: line_no,
                reason: "empty phrase".to_string(),
            });
        }
        let key = (fields[0].to_string(), phrase.join(" "));
        if !seen.insert(key) {
            return Err(ContextError::DuplicatePhrase {
                phrase: fields[3].to_string(),
                category: fields[0].to_string(),
                line: line_no,
            });
        }
        cues.push(ContextCue {
            phrase,
            kind,
            direction,
            window,
        });
    }
    Ok(cues)
}

#[derive(Debug, Clone, Copy)]
struct Occurrence {
    cue_idx: usize,
    start: usize,
    end: usize,
}

const TERMINATOR_WORDS: &[&str] = &["but", "however", "although", "though", "except", "yet"];
const TERMINATOR_PUNCT: &[&str] = &[".", ";", ":", "!", "?"];

fn is_terminator(token_lower: &str) -> bool {
    TERMINATOR_WORDS.contains(&token_lower) || TERMINATOR_PUNCT.contains(&token_lower)
}

/// Classifies the context of `mention` (a token index range) in `sentence`.
///
/// The nearest firing cue wins; a pre cue must end within its window before
/// the mention with no scope terminator in between (post cues symmetric).
pub fn classify_context(
    sentence: &Sentence,
    mention: Range<usize>,
    cues: &[ContextCue],
) -> Result<MentionContext, ContextError> {
    let n = sentence.tokens.len();
    if mention.start >= mention.end || mention.end > n {
        return Err(ContextError::MentionOutsideSentence {
            start: mention.start,
            end: mention.end,
            len: n,
        });
    }
    let lowers: Vec<&str> = sentence.tokens.iter().map(|t| t.lower.as_str()).collect();

    let mut occurrences: Vec<Occurrence> = Vec::new();
    for (cue_idx, cue) in cues.iter().enumerate() {
        let len = cue.phrase.len();
        if len > n {
            continue;
        }
        for start in 0..=(n - len) {
            if (0..len).all(|k| lowers[start + k] == cue.phrase[k]) {
                occurrences.push(Occurrence {
                    cue_idx,
                    start,
                    end: start + len,
                });
            }
        }
    }

    // Pseudo spans suppress trigger occurrences of their category that they
    // contain.
    let pseudo_spans: Vec<(CueCategory, usize, usize)> = occurrences
        .iter()
        .filter_map(|o| match cues[o.cue_idx].kind {
            CueKind::Pseudo(cat) => Some((cat, o.start, o.end)),
            CueKind::Trigger(_) => None,
        })
        .collect();

    let mut best: Option<(usize, usize, usize)> = None; // (distance, direction rank, occurrence idx)
    for (i, occ) in occurrences.iter().enumerate() {
        let cue = &cues[occ.cue_idx];
        let category = match cue.kind {
            CueKind::Trigger(cat) => cat,
            CueKind::Pseudo(_) => continue,
        };
        let blocked = pseudo_spans
            .iter()
            .any(|&(cat, s, e)| cat == category && s <= occ.start && occ.end <= e);
        if blocked {
            continue;
        }
        let (distance, gap) = match cue.direction {
            CueDirection::Pre => {
                if occ.end > mention.start {
                    continue;
                }
                (mention.start - occ.end, occ.end..mention.start)
            }
            CueDirection::Post => {
                if occ.start < mention.end {
                    continue;
                }
                (occ.start - mention.end, mention.end..occ.start)
            }
        };
        if distance > cue.window {
            continue;
        }
        if gap.clone().any(|t| is_terminator(lowers[t])) {
            continue;
        }
        let dir_rank = match cue.direction {
            CueDirection::Pre => 0,
            CueDirection::Post => 1,
        };
        let key = (distance, dir_rank, i);
        if best.map(|b| key < b).unwrap_or(true) {
            best = Some(key);
        }
    }

    let mut ctx = MentionContext::default();
    if let Some((_, _, i)) = best {
        let occ = occurrences[i];
        let cue = &cues[occ.cue_idx];
        match cue.kind {
            CueKind::Trigger(CueCategory::Negation) => ctx.negated = true,
            CueKind::Trigger(CueCategory::Uncertainty) => ctx.uncertain = true,
            CueKind::Trigger(CueCategory::Family) => ctx.family = true,
            CueKind::Pseudo(_) => unreachable!("pseudo occurrences are skipped"),
        }
        ctx.triggering_cue = Some(cue.clone());
    }
    Ok(ctx)
}

/// Finds the token index range of `phrase` (lowercased tokens) in a sentence,
/// used by tests and the terminology matcher.
pub fn find_token_phrase(sentence: &Sentence, phrase: &[&str]) -> Option<Range<usize>> {
    let n = sentence.tokens.len();
    let len = phrase.len();
    if len == 0 || len > n {
        return None;
    }
    (0..=(n - len)).find_map(|start| {
        (0..len)
            .all(|k| sentence.tokens[start + k].lower == phrase[k])
            .then_some(start..start + len)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_sentences;
    use crate::corpus::tokenize;

    fn sentence(text: &str) -> Sentence {
        let mut s = split_sentences(text).remove(0);
        s.tokens = tokenize(text);
        s
    }

    fn cue(category: &str, direction: &str, window: usize, phrase: &str) -> ContextCue {
        ContextCue {
            phrase: phrase.split_whitespace().map(|w| w.to_lowercase()).collect(),
            kind: parse_kind(category).unwrap(),
            direction: match direction {
                "pre" => CueDirection::Pre,
                _ => CueDirection::Post,
            },
            window,
        }
    }

    fn default_cues() -> Vec<ContextCue> {
        vec![
            cue("negation", "pre", 6, "no evidence of"),
            cue("negation", "pre", 6, "no"),
            cue("negation", "pre", 6, "denies"),
            cue("uncertainty", "pre", 6, "possibility of"),
            cue("uncertainty", "pre", 6, "discussed possibility of"),
            cue("family", "pre", 6, "brother"),
            cue("pseudo-negation", "pre", 6, "no increase"),
        ]
    }

    #[test]
    fn negated_mention() {
        let s = sentence("no evidence of neuropathy");
        let mention = find_token_phrase(&s, &["neuropathy"]).unwrap();
        let ctx = classify_context(&s, mention, &default_cues()).unwrap();
        assert!(ctx.negated);
        assert!(!ctx.affirmed());
    }

    #[test]
    fn uncertain_mention() {
        let s = sentence("discussed possibility of gastric bypass");
        let mention = find_token_phrase(&s, &["gastric", "bypass"]).unwrap();
        let ctx = classify_context(&s, mention, &default_cues()).unwrap();
        assert!(ctx.uncertain);
        assert!(!ctx.negated);
    }

    #[test]
    fn affirmed_without_cue() {
        let s = sentence("patient underwent cholecystectomy");
        let mention = find_token_phrase(&s, &["cholecystectomy"]).unwrap();
        let ctx = classify_context(&s, mention, &default_cues()).unwrap();
        assert!(ctx.affirmed());
        assert!(ctx.triggering_cue.is_none());
    }

    #[test]
    fn but_terminates_scope() {
        let with = sentence("denies chest pain");
        let mention = find_token_phrase(&with, &["chest", "pain"]).unwrap();
        assert!(classify_context(&with, mention, &default_cues()).unwrap().negated);

        let terminated = sentence("denies nausea but chest pain persists");
        let mention = find_token_phrase(&terminated, &["chest", "pain"]).unwrap();
        let ctx = classify_context(&terminated, mention, &default_cues()).unwrap();
        assert!(ctx.affirmed());
    }

    #[test]
    fn window_limits_reach() {
        let s = sentence("no one two three four five six seven neuropathy");
        let mention = find_token_phrase(&s, &["neuropathy"]).unwrap();
        let cues = vec![cue("negation", "pre", 6, "no")];
        let ctx = classify_context(&s, mention.clone(), &cues).unwrap();
        assert!(ctx.affirmed(), "cue 7 tokens away must not fire");
        let wide = vec![cue("negation", "pre", 7, "no")];
        assert!(classify_context(&s, mention, &wide).unwrap().negated);
    }

    #[test]
    fn pseudo_blocks_contained_trigger() {
        let s = sentence("no increase in neuropathy symptoms");
        let mention = find_token_phrase(&s, &["neuropathy"]).unwrap();
        let ctx = classify_context(&s, mention, &default_cues()).unwrap();
        assert!(ctx.affirmed());
    }

    #[test]
    fn family_context_detected() {
        let s = sentence("brother used cocaine");
        let mention = find_token_phrase(&s, &["cocaine"]).unwrap();
        let ctx = classify_context(&s, mention, &default_cues()).unwrap();
        assert!(ctx.family);
    }

    #[test]
    fn empty_cue_set_affirms_everything() {
        let s = sentence("no evidence of neuropathy");
        let mention = find_token_phrase(&s, &["neuropathy"]).unwrap();
        let ctx = classify_context(&s, mention, &[]).unwrap();
        assert!(ctx.affirmed());
    }

    #[test]
    fn post_cue_fires_after_mention() {
        let s = sentence("neuropathy was ruled out");
        let mention = find_token_phrase(&s, &["neuropathy"]).unwrap();
        let cues = vec![cue("negation", "post", 6, "ruled out")];
        assert!(classify_context(&s, mention, &cues).unwrap().negated);
    }

    #[test]
    fn mention_outside_sentence_errors() {
        let s = sentence("short sentence");
        assert!(classify_context(&s, 5..7, &default_cues()).is_err());
        assert!(classify_context(&s, 1..1, &default_cues()).is_err());
    }

    #[test]
    fn classify_is_pure() {
        let s = sentence("denies alcohol abuse");
        let mention = find_token_phrase(&s, &["alcohol", "abuse"]).unwrap();
        let a = classify_context(&s, mention.clone(), &default_cues()).unwrap();
        let b = classify_context(&s, mention, &default_cues()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cue_file_parsing_and_duplicates() {
        let ok = "negation\tpre\t6\tno evidence of\nnegation\tpre\t6\tdenies\n";
        let cues = parse_cues(ok, "test").unwrap();
        assert_eq!(cues.len(), 2);
        assert_eq!(cues[0].phrase, vec!["no", "evidence", "of"]);

        let dup = "negation\tpre\t6\tdenies\nnegation\tpre\t4\tdenies\n";
        assert!(matches!(
            parse_cues(dup, "test"),
            Err(ContextError::DuplicatePhrase { line: 2, .. })
        ));

        let bad = "negation\tpre\tdenies\n";
        assert!(matches!(
            parse_cues(bad, "test"),
            Err(ContextError::MalformedLine { line: 1, .. })
        ));
    }
}
