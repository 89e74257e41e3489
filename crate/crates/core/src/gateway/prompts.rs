//! Prompt templates.
//!
//! Augmentation prompts mark the mention as `{ surface }`. Direct linking
//! and re-ranking prompts mark it as `<MENTION> surface </MENTION>`. The
//! demonstrations are fixed text and must not be edited.

use thiserror::Error;

use crate::model::{char_to_byte, Entity, MentionContext};

use super::PromptKind;

pub const MENTION_OPEN: &str = "<MENTION>";
pub const MENTION_CLOSE: &str = "</MENTION>";

pub const RERANK100_MAX: usize = 100;
pub const RERANK10_MAX: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0:?} is not a prompt kind this builder produces")]
    WrongKind(PromptKind),
    #[error("mention span {start}+{length} is outside the context")]
    InvalidSpan { start: usize, length: usize },
    #[error("text already contains a {MENTION_OPEN}/{MENTION_CLOSE} marker")]
    MarkerCollision,
    #[error("{given} candidates exceed the limit of {max}")]
    TooManyCandidates { given: usize, max: usize },
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("candidate {0:?} has no abstract")]
    MissingAbstract(String),
}

const AUGMENT_INSTRUCTION: &str = "Please provide me more descriptive information about";

struct AugmentExemplar {
    context: &'static str,
    mention: &'static str,
    response: &'static str,
}

const AUGMENT_EXEMPLARS: [AugmentExemplar; 3] = [
    AugmentExemplar {
        context: "Nearly 17 months after he first issued his call for a \"fresh start after a season of cynicism\", Gov. George W. Bush ended his quest for the presidency Monday on a nearly identical note, pledging to purge { Washington } of what he cast as a crippling discord.  The Texas governor claimed that Gore's decades of experience in Washington had estranged him from the rest of the country by making him too trusting of federal government and too fond of federal spending.  \"My opponent vows to carry his home state\", Bush said. \" He may win Washington, D.C., but he's not going to win Tennessee. \"He forgot his roots\", Bush added. \"He forgot where he's from. He trusts Washington. We trust the people.\"",
        mention: "Washington",
        response: "Washington is the capital of the United States and the seat of the federal government. It is located on the Potomac River, between Maryland and Virginia. It is home to numerous monuments, memorials, and government buildings, including the White House, the Capitol Building, and the Supreme Court.",
    },
    AugmentExemplar {
        context: "O'Donnell and Trump have been feuding since he announced last month that Miss USA Tara Conner, whose title had been in jeopardy because of underage drinking, would keep her crown.  Trump is the owner of the Miss Universe Organization, which includes Miss USA and Miss Teen USA.  The 44-year-old outspoken moderator of \"The View\", who joined the show in September, said Trump's news conference with { Conner } had annoyed her \"on a multitude of levels and that the twice-divorced real estate mogul had no right to be \"the moral compass for 20-year-olds in America\". Trump fired back, calling O'Donnell a \"loser\" and a \"bully\", among other insults, in various media interviews.",
        mention: "Conner",
        response: "Conner is the Miss USA titleholder whose title was in jeopardy due to underage drinking. She was saved from losing her crown by Donald Trump, the owner of the Miss Universe Organization, which includes Miss USA and Miss Teen USA. Tara Conner was given a second chance by Trump and was allowed to keep her crown.",
    },
    AugmentExemplar {
        context: "Scottish Labour Party narrowly backs referendum.  STIRLING, Scotland 1996-08-31 British Labour Party leader Tony Blair won a narrow victory on Saturday when the party's Scottish executive voted 21-18 in favour of his plans for a referendum on a separate parliament for Scotland.  Blair once pledged to set up a Scottish parliament if the Labour won the next general election, which must be held by May 1997. Prime Minister John Major says the 300-year-old union of the Scottish and English parliaments will be a main plank in his Conservative Party's election platform. Conservatives have only 10 of the 72 Scottish seats in parliament and consistently run third in opinion polls in Scotland behind { Labour } and the independence-seeking Scottish National Party.",
        mention: "Labour",
        response: "The Labour Party is a centre-left political party in the United Kingdom. It is the main opposition party to the Conservative Party and is led by Tony Blair. The Labour Party has traditionally been strong in Scotland, and the Scottish Labour Party is a branch of the UK Labour Party. In the text, the Scottish Labour Party narrowly voted in favour of Tony Blair's plans for a referendum on a separate parliament for Scotland.",
    },
];

const DIRECT_EL_INSTRUCTION: &str = "Gives the text and mentions within the text highlighted by <MENTION> and </MENTION>. Please give which page in Wikipedia this mention is most likely to be? Please answer me directly in this form: \"{mention}\":\"{Wikipedia page url}\".";

const DIRECT_EL_DEMOS: [(&str, &str); 3] = [
    (
        "Having caught the popular attention and with goodwill at a high-point , Nelsonic was able to obtain licensing from several big-name video game companies such as Sega , Nintendo ,<MENTION> Midway Games </MENTION>, and Mylstar Electronics .",
        "\"Midway Games\": \"https://en.wikipedia.org/wiki/Midway_Games\"",
    ),
    (
        "State Highway 110 or SH 110 is a state highway in the U.S. state of Texas that runs from Grand Saline to Rusk .  SH 110 begins at an intersection with and in downtown Rusk and leaves the courthouse square north with US 84 , crossing on its way to a split on the northeast side of Rusk where US 84 goes off east and SH 110 turns north , out of town .  The road passes <MENTION> Ponta </MENTION> and New Summerfield before crossing the county line into Smith County as it enters Troup .  After a brief downtown multiplex with SH 135 , SH 110 leaves Troup going northwest through Whitehouse on its way to Tyler .",
        "\"Ponta\": \"https://en.wikipedia.org/wiki/Ponta,_Texas\"",
    ),
    (
        "Messier 49 ( also known as M 49 or NGC 4472 ) is an elliptical galaxy located about away in the equatorial <MENTION> constellation </MENTION> of Virgo .  This galaxy was discovered by French astronomer Charles Messier on February 19 , 1771 .",
        "\"constellation\": \"https://en.wikipedia.org/wiki/Constellation\"",
    ),
];

const RERANK_INSTRUCTION: &str = "Gives the text and mentions within the text highlighted by <MENTION> and </MENTION>. Please select from the options below which Wikipedia page this mention is most likely to be from? Please answer me directly in this form: \"({letter}): {Wikipedia entity name and url}\".And I also want you to give an explanation in the next line.";

const RERANK_DEMO_TEXT: &str = "Having caught the popular attention and with goodwill at a high-point , Nelsonic was able to obtain licensing from several big-name video game companies such as Sega , Nintendo ,<MENTION> Midway Games </MENTION>, and Mylstar Electronics .";

const RERANK100_DEMO: &str = "Options:
(1): ['Time Warner Interactive', 'https://en.wikipedia.org/wiki?curid=12642915']
(2): ['TT Games', 'https://en.wikipedia.org/wiki?curid=49108324']
(3): ['Atari Games', 'https://en.wikipedia.org/wiki?curid=304833']
(4): ['Midway Games', 'https://en.wikipedia.org/wiki?curid=430266']
(5): ['Vivendi Games', 'https://en.wikipedia.org/wiki?curid=6573837']";

const RERANK100_DEMO_ANSWER: &str = "Answer: (4): ['Midway Games', 'https://en.wikipedia.org/wiki?curid=430266']
Explanation: The mention \"<MENTION> Midway Games </MENTION>\" in the provided text is most likely from the Wikipedia page for Midway Games. Midway Games is mentioned in the text as one of the big-name video game companies from which Nelsonic obtained licensing. The description of Midway Games in option (4) matches the context in the text, making it the most likely source.";

const RERANK10_DEMO: &str = "Options:
(a): ['TT Games', 'https://en.wikipedia.org/wiki?curid=49108324', 'TT Games Limited is a British holding company and a subsidiary of Warner Bros. Games. ...']
(b): ['Atari Games', 'https://en.wikipedia.org/wiki?curid=304833', 'Atari Games Corporation, known as Midway Games West Inc. after 1999, was an American producer of arcade games. ...']
(c): ['Midway Games', 'https://en.wikipedia.org/wiki?curid=430266', 'Midway Games Inc., known previously as Midway Manufacturing and Bally Midway, and commonly known as simply Midway, was an American video game developer and publisher. ...']";

const RERANK10_DEMO_ANSWER: &str = "Answer: (c): ['Midway Games', 'https://en.wikipedia.org/wiki?curid=430266']
Explanation: For mention of \"<MENTION> Midway Games </MENTION>\", the most similar option is option (c) Midway Games. Additionally, the description in option (c) of Midway Games as an American video game developer and publisher matches the context in the text, making it the most likely source.";

/// Replaces the mention span with `open + surface + close`.
fn wrap_span(mc: &MentionContext, open: &str, close: &str) -> Result<String, PromptError> {
    let span_err = || PromptError::InvalidSpan {
        start: mc.start,
        length: mc.length,
    };
    let begin = char_to_byte(&mc.context, mc.start).ok_or_else(span_err)?;
    let end = char_to_byte(&mc.context[begin..], mc.length).ok_or_else(span_err)? + begin;
    Ok(format!(
        "{}{open}{}{close}{}",
        &mc.context[..begin],
        &mc.context[begin..end],
        &mc.context[end..]
    ))
}

fn augment_query(wrapped: &str, mention: &str, require_mention: bool) -> String {
    let mut out =
        format!("Text: {wrapped}\n{AUGMENT_INSTRUCTION} {{ {mention} }} from the text above.");
    if require_mention {
        out.push_str(&format!(
            " Make sure to include {mention} in your description."
        ));
    }
    out.push_str("\nAnswer:");
    out
}

/// Builds the zero- or three-shot prompt asking for a description of the
/// mention.
pub fn build_augment_prompt(mc: &MentionContext, kind: PromptKind) -> Result<String, PromptError> {
    let wrapped = wrap_span(mc, "{ ", " }")?;
    match kind {
        PromptKind::AugmentZeroShot => Ok(format!(
            "Consider the following text.\n{}",
            augment_query(&wrapped, &mc.surface, true)
        )),
        PromptKind::AugmentThreeShot => {
            let mut out = String::new();
            for (i, ex) in AUGMENT_EXEMPLARS.iter().enumerate() {
                out.push_str(&format!(
                    "Example {}. Consider the following text.\n",
                    i + 1
                ));
                out.push_str(&augment_query(ex.context, ex.mention, false));
                out.push('\n');
                out.push_str(ex.response);
                out.push_str("\n\n");
            }
            out.push_str("Now consider the following text.\n");
            out.push_str(&augment_query(&wrapped, &mc.surface, true));
            Ok(out)
        }
        other => Err(PromptError::WrongKind(other)),
    }
}

fn marked_text(mc: &MentionContext) -> Result<String, PromptError> {
    if mc.context.contains(MENTION_OPEN) || mc.context.contains(MENTION_CLOSE) {
        return Err(PromptError::MarkerCollision);
    }
    wrap_span(mc, "<MENTION> ", " </MENTION>")
}

/// Few-shot prompt asking the LLM for the mention's Wikipedia URL.
pub fn build_direct_el_prompt(mc: &MentionContext) -> Result<String, PromptError> {
    let text = marked_text(mc)?;
    let mut out = String::from(DIRECT_EL_INSTRUCTION);
    out.push('\n');
    for (demo, answer) in DIRECT_EL_DEMOS {
        out.push_str(&format!("Text: {demo}\nAnswer: {answer}\n"));
    }
    out.push_str(&format!("Text: {text}\nAnswer:"));
    Ok(out)
}

/// A Python-style string literal, as the option lists are rendered.
fn py_str(s: &str) -> String {
    if s.contains('\'') && !s.contains('"') {
        format!("\"{s}\"")
    } else {
        format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
    }
}

/// A re-rank candidate: the entity plus its abstract, if known.
#[derive(Debug, Clone, Copy)]
pub struct RerankCandidate<'a> {
    pub entity: &'a Entity,
    pub abstract_text: Option<&'a str>,
}

impl<'a> RerankCandidate<'a> {
    pub fn new(entity: &'a Entity) -> Self {
        RerankCandidate {
            entity,
            abstract_text: None,
        }
    }

    /// Uses the entity description as the abstract when it is nonempty.
    pub fn with_description(entity: &'a Entity) -> Self {
        RerankCandidate {
            entity,
            abstract_text: Some(entity.description.as_str()).filter(|d| !d.is_empty()),
        }
    }
}

/// Multiple-choice prompt over retrieved candidates: numbered options for
/// [`PromptKind::Rerank100`], lettered options with abstracts for
/// [`PromptKind::Rerank10`].
pub fn build_rerank_prompt(
    mc: &MentionContext,
    candidates: &[RerankCandidate<'_>],
    kind: PromptKind,
) -> Result<String, PromptError> {
    let max = match kind {
        PromptKind::Rerank100 => RERANK100_MAX,
        PromptKind::Rerank10 => RERANK10_MAX,
        other => return Err(PromptError::WrongKind(other)),
    };
    if candidates.is_empty() {
        return Err(PromptError::NoCandidates);
    }
    if candidates.len() > max {
        return Err(PromptError::TooManyCandidates {
            given: candidates.len(),
            max,
        });
    }
    let text = marked_text(mc)?;

    let mut options = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let title = py_str(&c.entity.title);
        let url = py_str(c.entity.url.as_deref().unwrap_or(""));
        let line = match kind {
            PromptKind::Rerank100 => format!("({}): [{title}, {url}]", i + 1),
            _ => {
                let abs = c
                    .abstract_text
                    .filter(|a| !a.is_empty())
                    .ok_or_else(|| PromptError::MissingAbstract(c.entity.id.clone()))?;
                let letter = char::from(b'a' + i as u8);
                format!("({letter}): [{title}, {url}, {}]", py_str(abs))
            }
        };
        options.push(line);
    }

    let (prefix, demo, demo_answer) = match kind {
        PromptKind::Rerank100 => ("Instruction: ", RERANK100_DEMO, RERANK100_DEMO_ANSWER),
        _ => ("", RERANK10_DEMO, RERANK10_DEMO_ANSWER),
    };
    Ok(format!(
        "{prefix}{RERANK_INSTRUCTION}\n\n{demo}\nText: {RERANK_DEMO_TEXT}\n{demo_answer}\n\nOptions:\n{}\nText: {text}\nAnswer:",
        options.join("\n")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn washington() -> MentionContext {
        MentionContext::new(
            "msnbc-1",
            "Gov. George W. Bush ended his quest pledging to purge Washington of what he cast as a crippling discord.",
            54,
            10,
            "Washington",
            "Washington,_D.C.",
        )
    }

    fn xinhua() -> MentionContext {
        MentionContext::locate(
            "ace-1",
            "Xinhua News Agency , Shanghai , April 3rd , by reporter Jierong Zhou Recently , HSBC has moved its Shanghai branch to the China Shipping Mansion.",
            "Xinhua News Agency",
            "Xinhua_News_Agency",
        )
        .unwrap()
    }

    #[test]
    fn zero_shot_layout() {
        let mc = washington();
        assert!(mc.check().is_none());
        let p = build_augment_prompt(&mc, PromptKind::AugmentZeroShot).unwrap();
        assert_eq!(
            p,
            "Consider the following text.\n\
             Text: Gov. George W. Bush ended his quest pledging to purge { Washington } of what he cast as a crippling discord.\n\
             Please provide me more descriptive information about { Washington } from the text above. Make sure to include Washington in your description.\n\
             Answer:"
        );
    }

    #[test]
    fn three_shot_contains_exemplars_then_query() {
        let p = build_augment_prompt(&washington(), PromptKind::AugmentThreeShot).unwrap();
        assert!(p.starts_with("Example 1. Consider the following text.\nText: Nearly 17 months"));
        assert!(p.contains("Washington is the capital of the United States"));
        assert!(p.contains("Example 2. Consider the following text."));
        assert!(p.contains("Tara Conner was given a second chance"));
        assert!(p.contains("Example 3. Consider the following text."));
        assert!(p.contains("behind { Labour } and the independence-seeking"));
        let query = p
            .split("Now consider the following text.\n")
            .nth(1)
            .unwrap();
        assert!(query.contains("purge { Washington } of"));
        assert!(p.ends_with("\nAnswer:"));
    }

    #[test]
    fn wrap_at_position_zero() {
        let mc = MentionContext::locate("d", "Paris is lovely.", "Paris", "Q90").unwrap();
        let p = build_augment_prompt(&mc, PromptKind::AugmentZeroShot).unwrap();
        assert!(p.contains("Text: { Paris } is lovely.\n"));
    }

    #[test]
    fn direct_el_prompt() {
        let p = build_direct_el_prompt(&xinhua()).unwrap();
        assert!(p.contains("Text: <MENTION> Xinhua News Agency </MENTION> , Shanghai"));
        assert!(p.contains(
            "Please answer me directly in this form: \"{mention}\":\"{Wikipedia page url}\""
        ));
        assert!(p.contains("Answer: \"Ponta\": \"https://en.wikipedia.org/wiki/Ponta,_Texas\""));
        assert!(p.ends_with("Answer:"));
        assert_eq!(p.matches("Text: ").count(), 4);
    }

    #[test]
    fn marker_collision() {
        let mc = MentionContext::locate("d", "a</MENTION>b", "a</MENTION>b", "x").unwrap();
        assert_eq!(
            build_direct_el_prompt(&mc),
            Err(PromptError::MarkerCollision)
        );
    }

    fn entities(n: usize) -> Vec<Entity> {
        (0..n)
            .map(|i| {
                Entity::new(format!("E{i}"), format!("News Agency {i}"))
                    .with_url(format!("https://en.wikipedia.org/wiki?curid={i}"))
                    .with_description(format!("Agency number {i}."))
            })
            .collect()
    }

    #[test]
    fn rerank100_numbering() {
        let es = entities(5);
        let cands: Vec<_> = es.iter().map(RerankCandidate::new).collect();
        let p = build_rerank_prompt(&xinhua(), &cands, PromptKind::Rerank100).unwrap();
        let query = p.rsplit("\n\nOptions:\n").next().unwrap();
        for i in 1..=5 {
            assert!(query.contains(&format!("({i}): ['News Agency {}', ", i - 1)));
        }
        assert!(!query.contains("(6):"));
        assert!(p.starts_with("Instruction: Gives the text"));
        assert!(query.contains("Text: <MENTION> Xinhua News Agency </MENTION>"));
    }

    #[test]
    fn rerank10_lettering_and_abstracts() {
        let es = entities(3);
        let cands: Vec<_> = es.iter().map(RerankCandidate::with_description).collect();
        let p = build_rerank_prompt(&xinhua(), &cands, PromptKind::Rerank10).unwrap();
        let query = p.rsplit("\n\nOptions:\n").next().unwrap();
        assert!(query.starts_with(
            "(a): ['News Agency 0', 'https://en.wikipedia.org/wiki?curid=0', 'Agency number 0.']\n(b):"
        ));
        assert!(query.contains("(c): "));
        assert!(!query.contains("(d): "));
        assert!(p.starts_with("Gives the text"));
    }

    #[test]
    fn rerank_bounds() {
        let es = entities(11);
        let cands: Vec<_> = es.iter().map(RerankCandidate::with_description).collect();
        assert_eq!(
            build_rerank_prompt(&xinhua(), &cands, PromptKind::Rerank10),
            Err(PromptError::TooManyCandidates { given: 11, max: 10 })
        );
        let bare: Vec<_> = es[..2].iter().map(RerankCandidate::new).collect();
        assert_eq!(
            build_rerank_prompt(&xinhua(), &bare, PromptKind::Rerank10),
            Err(PromptError::MissingAbstract("E0".into()))
        );
        assert_eq!(
            build_rerank_prompt(&xinhua(), &[], PromptKind::Rerank100),
            Err(PromptError::NoCandidates)
        );
        let many = entities(101);
        let cands: Vec<_> = many.iter().map(RerankCandidate::new).collect();
        assert!(build_rerank_prompt(&xinhua(), &cands, PromptKind::Rerank100).is_err());
        assert!(build_rerank_prompt(&xinhua(), &cands[..100], PromptKind::Rerank100).is_ok());
    }

    #[test]
    fn python_quoting() {
        assert_eq!(py_str("Midway Games"), "'Midway Games'");
        assert_eq!(py_str("O'Donnell"), "\"O'Donnell\"");
        assert_eq!(py_str("a'b\"c"), "'a\\'b\"c'");
    }
}
