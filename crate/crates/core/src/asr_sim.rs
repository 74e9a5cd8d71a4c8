//! Synthetic labelled corpora with simulated ASR n-best lists.
//!
//! Utterances are sampled from a small template grammar (domain → intent →
//! patterns with `<slot>` fillers). Each clean transcription is corrupted
//! character by character into ranked candidates whose noise rate grows
//! with rank, so lower ranks are worse on average but can still beat rank 1.
//! Every utterance draws from its own random stream derived from the seed
//! and its id, which makes generation order-independent and parallel-safe.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integration::{Hypothesis, NBestList};

const SUBSTITUTION_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Candidate draws per rank slot before the slot is given up.
pub const ATTEMPTS_PER_SLOT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
    /// Scale of one corruption pass shared by every hypothesis of an
    /// utterance, applied before the per-rank passes. Real n-best lists
    /// tend to agree on most of their errors; 0 makes ranks independent.
    #[serde(default)]
    pub shared: f64,
    /// Weighted substitution targets per source character. Characters not
    /// listed substitute uniformly over `a..=z`.
    #[serde(default)]
    pub confusions: BTreeMap<char, Vec<(char, f64)>>,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::moderate(0)
    }
}

impl NoiseProfile {
    pub fn silent(seed: u64) -> Self {
        NoiseProfile {
            substitution: 0.0,
            deletion: 0.0,
            insertion: 0.0,
            shared: 0.0,
            confusions: BTreeMap::new(),
            temperature: 1.0,
            seed,
        }
    }

    /// Moderate character noise with a few sound-alike confusions.
    pub fn moderate(seed: u64) -> Self {
        let mut confusions = BTreeMap::new();
        for (a, b) in [
            ('m', 'n'),
            ('b', 'p'),
            ('t', 'd'),
            ('s', 'z'),
            ('c', 'k'),
            ('f', 'v'),
            ('e', 'i'),
            ('o', 'u'),
            ('a', 'e'),
        ] {
            confusions.entry(a).or_insert_with(Vec::new).push((b, 3.0));
            confusions.entry(b).or_insert_with(Vec::new).push((a, 3.0));
        }
        NoiseProfile {
            substitution: 0.12,
            deletion: 0.04,
            insertion: 0.04,
            shared: 0.15,
            confusions,
            temperature: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("substitution", self.substitution),
            ("deletion", self.deletion),
            ("insertion", self.insertion),
            ("shared", self.shared),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        if self.substitution + self.deletion + self.insertion > 1.0 {
            return Err(Error::invalid("noise rates sum above 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("score temperature must be positive"));
        }
        for (c, alts) in &self.confusions {
            if alts.is_empty() || alts.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::invalid(format!("bad confusion weights for {c:?}")));
            }
        }
        Ok(())
    }

    fn substitute<R: Rng>(&self, c: char, rng: &mut R) -> char {
        if let Some(alts) = self.confusions.get(&c) {
            let total: f64 = alts.iter().map(|(_, w)| w).sum();
            let mut u = rng.gen_range(0.0..total);
            for &(alt, w) in alts {
                if u < w {
                    return alt;
                }
                u -= w;
            }
            return alts[alts.len() - 1].0;
        }
        loop {
            let alt = SUBSTITUTION_ALPHABET[rng.gen_range(0..SUBSTITUTION_ALPHABET.len())] as char;
            if alt != c {
                return alt;
            }
        }
    }
}

/// Corrupts `text` with the profile's rates multiplied by `scale`.
///
/// Each non-whitespace character is independently substituted, deleted, or
/// followed by an inserted letter. Whitespace is never touched; the result
/// has single spaces between the surviving words.
pub fn corrupt_text<R: Rng>(text: &str, profile: &NoiseProfile, scale: f64, rng: &mut R) -> String {
    let s = profile.substitution * scale;
    let d = profile.deletion * scale;
    let i = profile.insertion * scale;
    let mut out = String::with_capacity(text.len() + 4);
    for c in text.chars() {
        if c.is_whitespace() {
            out.push(' ');
            continue;
        }
        let u: f64 = rng.gen();
        if u < s {
            out.push(profile.substitute(c, rng));
        } else if u < s + d {
        } else if u < s + d + i {
            out.push(c);
            out.push(SUBSTITUTION_ALPHABET[rng.gen_range(0..SUBSTITUTION_ALPHABET.len())] as char);
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Scores `exp(-k/T)` for ranks `k = 1..=r`, normalized to sum to one.
pub fn rank_scores(r: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (1..=r).map(|k| -(k as f64) / temperature).collect();
    let max = logits.first().copied().unwrap_or(0.0);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Up to `n` distinct ranked candidates with strictly decreasing scores.
/// The transcription is first corrupted once at scale `shared`; rank `k`
/// then corrupts that common text at the profile rates scaled by `k / n`.
pub fn simulate_nbest<R: Rng>(
    transcription: &str,
    n: usize,
    profile: &NoiseProfile,
    rng: &mut R,
) -> Vec<(String, f64)> {
    let common = if profile.shared > 0.0 {
        corrupt_text(transcription, profile, profile.shared, rng)
    } else {
        transcription.to_string()
    };
    let mut texts: Vec<String> = Vec::with_capacity(n);
    for k in 1..=n {
        let scale = k as f64 / n as f64;
        for _ in 0..ATTEMPTS_PER_SLOT {
            let cand = corrupt_text(&common, profile, scale, rng);
            if !texts.contains(&cand) {
                texts.push(cand);
                break;
            }
        }
    }
    let scores = rank_scores(texts.len(), profile.temperature);
    texts.into_iter().zip(scores).collect()
}

/// Random stream for one utterance, derived from the corpus seed and its id.
pub fn utterance_stream(seed: u64, id: &str) -> ChaCha8Rng {
    // FNV-1a over the id, then a splitmix64 finalizer with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentTemplate {
    pub name: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainTemplate {
    pub name: String,
    pub intents: Vec<IntentTemplate>,
}

/// Domain → intent → pattern grammar with named slot filler lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateSet {
    pub domains: Vec<DomainTemplate>,
    pub slots: BTreeMap<String, Vec<String>>,
}

fn split_alternatives(s: &str) -> Vec<String> {
    s.split('|')
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect()
}

impl TemplateSet {
    /// Parses the line format:
    ///
    /// ```text
    /// # comment
    /// slot song = yellow submarine | let it be
    /// domain Music
    /// intent PlaySong = play <song> | put on <song>
    /// ```
    ///
    /// `intent` lines belong to the most recent `domain`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut set = TemplateSet::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "domain" => {
                    if rest.is_empty() || rest.contains(char::is_whitespace) {
                        return Err(err(line_no, "domain needs a single-word name".into()));
                    }
                    set.domains.push(DomainTemplate {
                        name: rest.to_string(),
                        intents: Vec::new(),
                    });
                }
                "intent" | "slot" => {
                    let (name, body) = rest
                        .split_once('=')
                        .ok_or_else(|| err(line_no, format!("expected `{keyword} NAME = ...`")))?;
                    let name = name.trim();
                    let alternatives = split_alternatives(body);
                    if name.is_empty() || alternatives.is_empty() {
                        return Err(err(line_no, format!("empty {keyword} definition")));
                    }
                    if keyword == "slot" {
                        set.slots.insert(name.to_string(), alternatives);
                    } else {
                        let domain = set
                            .domains
                            .last_mut()
                            .ok_or_else(|| err(line_no, "intent before any domain".into()))?;
                        domain.intents.push(IntentTemplate {
                            name: name.to_string(),
                            patterns: alternatives,
                        });
                    }
                }
                other => return Err(err(line_no, format!("unknown keyword {other:?}"))),
            }
        }
        set.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TemplateSet::parse(&text, &path.display().to_string())
    }

    pub fn builtin() -> Self {
        TemplateSet::parse(BUILTIN_TEMPLATES, "<builtin>").expect("builtin templates parse")
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Empty("template set"));
        }
        for d in &self.domains {
            if d.intents.is_empty() {
                return Err(Error::invalid(format!("domain {} has no intents", d.name)));
            }
            for i in &d.intents {
                for p in &i.patterns {
                    for slot in slot_names(p) {
                        if !self.slots.contains_key(slot) {
                            return Err(Error::invalid(format!("pattern {p:?} uses undefined slot <{slot}>")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws `(domain, intent, transcription)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (&str, &str, String) {
        let d = &self.domains[rng.gen_range(0..self.domains.len())];
        let i = &d.intents[rng.gen_range(0..d.intents.len())];
        let p = &i.patterns[rng.gen_range(0..i.patterns.len())];
        let mut text = String::new();
        let mut rest = p.as_str();
        while let Some(start) = rest.find('<') {
            text.push_str(&rest[..start]);
            let end = start + rest[start..].find('>').expect("validated slot");
            let fillers = &self.slots[&rest[start + 1..end]];
            text.push_str(&fillers[rng.gen_range(0..fillers.len())]);
            rest = &rest[end + 1..];
        }
        text.push_str(rest);
        (&d.name, &i.name, text)
    }
}

fn slot_names(pattern: &str) -> impl Iterator<Item = &str> {
    pattern
        .split('<')
        .skip(1)
        .filter_map(|s| s.split_once('>').map(|(n, _)| n))
}

/// Generates `count` records with ids `{prefix}{index:06}`.
pub fn generate_synthetic_corpus(
    templates: &TemplateSet,
    count: usize,
    n: usize,
    profile: &NoiseProfile,
    prefix: &str,
    exec: Execution,
) -> Result<Vec<NBestList>> {
    templates.validate()?;
    profile.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(exec.map_range(0..count, |i| {
        let id = format!("{prefix}{i:06}");
        let mut rng = utterance_stream(profile.seed, &id);
        let (domain, intent, transcription) = templates.sample(&mut rng);
        let nbest = simulate_nbest(&transcription, n, profile, &mut rng)
            .into_iter()
            .map(|(text, score)| Hypothesis::scored(text, score))
            .collect();
        NBestList {
            id,
            transcription: Some(transcription),
            domain: domain.to_string(),
            intent: intent.to_string(),
            nbest,
        }
    }))
}

/// Five-domain grammar used by default. Some titles are shared between
/// music and video so that even clean text is occasionally ambiguous.
pub const BUILTIN_TEMPLATES: &str = r#"
# slot fillers
slot song = yellow submarine | let it be | hey jude | bohemian rhapsody | hotel california | purple rain | wonderwall | imagine | thriller | halo | frozen | titanic theme | believer | shallow | roar | hello
slot artist = the beatles | queen | prince | adele | madonna | coldplay | muse | eminem | drake | rihanna | shakira | oasis
slot genre = jazz | rock | classical | hip hop | country | blues | reggae | pop
slot movie = titanic | frozen | avatar | inception | jaws | rocky | alien | gladiator | up | coco | cars | thriller | purple rain | halo | believer | shallow
slot show = friends | the office | seinfeld | lost | dexter | narcos | house | the crown
slot city = boston | seattle | chicago | denver | austin | miami | paris | london | tokyo | berlin
slot day = today | tomorrow | tonight | this weekend | on monday | on friday
slot item = batteries | paper towels | coffee | dog food | shampoo | headphones | socks | a phone charger | toothpaste | light bulbs
slot contact = mom | dad | john | sarah | the office | my brother | my sister | alex | grandma | the doctor
slot number = one | two | three | four | five

domain Music
intent PlaySong = play <song> | play <song> by <artist> | put on <song> | i want to hear <song>
intent PlayArtist = play some <artist> | play music by <artist> | shuffle <artist>
intent PlayGenre = play some <genre> | put on <genre> music | play <genre> radio

domain Video
intent PlayMovie = play <movie> | watch <movie> | play the movie <movie> | start <movie>
intent PlayShow = play <show> | watch <show> season <number> | continue watching <show>

domain Weather
intent GetForecast = what is the weather <day> | weather in <city> <day> | forecast for <city>
intent GetRain = will it rain <day> | is it going to rain in <city> | do i need an umbrella <day>

domain Shopping
intent AddToCart = add <item> to my cart | buy <item> | order <number> <item>
intent TrackOrder = where is my order | track my <item> order | when will my <item> arrive

domain Communication
intent Call = call <contact> | phone <contact> | dial <contact>
intent Message = text <contact> | send a message to <contact> | tell <contact> i am late
"#;
