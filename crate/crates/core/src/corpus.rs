//! Corpus model: two-channel conversations with known (unordered) speaker
//! pairs, pairwise side scores, and the reference channel assignment.
//!
//! All three file formats are CSV with fixed headers:
//!
//! * conversations: `conv_id,side_l,side_r,speaker_a,speaker_b`
//! * scores:        `side_a,side_b,score` (natural-log LLR)
//! * reference:     `conv_id,speaker_in_l`
//!
//! Loading normalizes row order (sorted by id), so identical corpora produce
//! identical in-memory structures regardless of how the files were written.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

/// Identifier of one recording side (one channel of one conversation).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SideId(String);

impl SideId {
    pub fn new(id: impl Into<String>) -> Self {
        SideId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SideId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of a speaker; equality is exact string match.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(String);

impl SpeakerId {
    pub fn new(id: impl Into<String>) -> Self {
        SpeakerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unordered pair of distinct speakers, stored in sorted order.
///
/// The sorted order defines which speaker is "first-listed"; configuration
/// bit 0 places that speaker in channel ℓ.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerPair {
    first: SpeakerId,
    second: SpeakerId,
}

impl SpeakerPair {
    pub fn new(a: SpeakerId, b: SpeakerId) -> Result<Self> {
        if a == b {
            return Err(Error::Domain(format!("speaker {a} paired with itself")));
        }
        let (first, second) = if a <= b { (a, b) } else { (b, a) };
        Ok(SpeakerPair { first, second })
    }

    pub fn first(&self) -> &SpeakerId {
        &self.first
    }

    pub fn second(&self) -> &SpeakerId {
        &self.second
    }

    pub fn contains(&self, s: &SpeakerId) -> bool {
        &self.first == s || &self.second == s
    }

    /// The member of the pair that is not `s`.
    pub fn other(&self, s: &SpeakerId) -> Option<&SpeakerId> {
        if s == &self.first {
            Some(&self.second)
        } else if s == &self.second {
            Some(&self.first)
        } else {
            None
        }
    }
}

/// Unordered pair of distinct sides, stored in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SidePair {
    a: SideId,
    b: SideId,
}

impl SidePair {
    pub fn new(x: SideId, y: SideId) -> Result<Self> {
        if x == y {
            return Err(Error::Domain(format!("side {x} paired with itself")));
        }
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Ok(SidePair { a, b })
    }

    pub fn a(&self) -> &SideId {
        &self.a
    }

    pub fn b(&self) -> &SideId {
        &self.b
    }
}

impl fmt::Display for SidePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

/// One two-channel conversation with its unordered speaker pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversation {
    conv_id: String,
    side_l: SideId,
    side_r: SideId,
    speakers: SpeakerPair,
}

impl Conversation {
    pub fn new(
        conv_id: impl Into<String>,
        side_l: SideId,
        side_r: SideId,
        speakers: SpeakerPair,
    ) -> Result<Self> {
        let conv_id = conv_id.into();
        if side_l == side_r {
            return Err(Error::Domain(format!(
                "conversation {conv_id}: side {side_l} used for both channels"
            )));
        }
        Ok(Conversation {
            conv_id,
            side_l,
            side_r,
            speakers,
        })
    }

    pub fn id(&self) -> &str {
        &self.conv_id
    }

    pub fn side_l(&self) -> &SideId {
        &self.side_l
    }

    pub fn side_r(&self) -> &SideId {
        &self.side_r
    }

    pub fn speakers(&self) -> &SpeakerPair {
        &self.speakers
    }
}

/// The corpus: validated conversations plus a speaker → conversations index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConversationLabelling {
    conversations: Vec<Conversation>,
    by_speaker: BTreeMap<SpeakerId, Vec<usize>>,
    side_of: BTreeMap<SideId, usize>,
}

impl ConversationLabelling {
    /// Validates and normalizes a set of conversations (sorted by id).
    pub fn new(mut conversations: Vec<Conversation>) -> Result<Self> {
        conversations.sort_by(|a, b| a.conv_id.cmp(&b.conv_id));
        for w in conversations.windows(2) {
            if w[0].conv_id == w[1].conv_id {
                return Err(Error::Domain(format!(
                    "duplicate conversation id {}",
                    w[0].conv_id
                )));
            }
        }
        let mut by_speaker: BTreeMap<SpeakerId, Vec<usize>> = BTreeMap::new();
        let mut side_of: BTreeMap<SideId, usize> = BTreeMap::new();
        for (i, conv) in conversations.iter().enumerate() {
            for side in [&conv.side_l, &conv.side_r] {
                if let Some(&other) = side_of.get(side) {
                    return Err(Error::Domain(format!(
                        "side {side} appears in conversations {} and {}",
                        conversations[other].conv_id, conv.conv_id
                    )));
                }
                side_of.insert(side.clone(), i);
            }
            for spk in [conv.speakers.first(), conv.speakers.second()] {
                by_speaker.entry(spk.clone()).or_default().push(i);
            }
        }
        Ok(ConversationLabelling {
            conversations,
            by_speaker,
            side_of,
        })
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn n_speakers(&self) -> usize {
        self.by_speaker.len()
    }

    pub fn speakers(&self) -> impl Iterator<Item = &SpeakerId> {
        self.by_speaker.keys()
    }

    /// Indices of the conversations a speaker takes part in.
    pub fn conversations_of(&self, speaker: &SpeakerId) -> &[usize] {
        self.by_speaker
            .get(speaker)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn has_side(&self, side: &SideId) -> bool {
        self.side_of.contains_key(side)
    }

    /// Index of the conversation a side belongs to.
    pub fn conversation_of_side(&self, side: &SideId) -> Option<usize> {
        self.side_of.get(side).copied()
    }
}

/// Symmetric map from unordered side pairs to scores in natural-log units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreMatrix {
    entries: BTreeMap<SidePair, f64>,
}

impl ScoreMatrix {
    pub fn new() -> Self {
        ScoreMatrix::default()
    }

    /// Inserts a score; a repeated pair with a conflicting value is an error.
    pub fn insert(&mut self, pair: SidePair, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Domain(format!("non-finite score for pair {pair}")));
        }
        match self.entries.get(&pair) {
            Some(&existing) if existing != score => Err(Error::Domain(format!(
                "asymmetric duplicate score for pair {pair}: {existing} vs {score}"
            ))),
            _ => {
                self.entries.insert(pair, score);
                Ok(())
            }
        }
    }

    pub fn get(&self, pair: &SidePair) -> Option<f64> {
        self.entries.get(pair).copied()
    }

    pub fn score(&self, x: &SideId, y: &SideId) -> Option<f64> {
        let pair = SidePair::new(x.clone(), y.clone()).ok()?;
        self.get(&pair)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SidePair, f64)> {
        self.entries.iter().map(|(p, &s)| (p, s))
    }

    /// A copy with every score mapped through `f`.
    pub fn map_scores(&self, mut f: impl FnMut(f64) -> f64) -> ScoreMatrix {
        ScoreMatrix {
            entries: self
                .entries
                .iter()
                .map(|(p, &s)| (p.clone(), f(s)))
                .collect(),
        }
    }
}

/// Ground-truth channel assignment: conv_id → speaker occupying channel ℓ.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReferenceAssignment {
    by_conv: BTreeMap<String, SpeakerId>,
}

impl ReferenceAssignment {
    pub fn new(by_conv: BTreeMap<String, SpeakerId>) -> Self {
        ReferenceAssignment { by_conv }
    }

    pub fn speaker_in_l(&self, conv_id: &str) -> Option<&SpeakerId> {
        self.by_conv.get(conv_id)
    }

    pub fn len(&self) -> usize {
        self.by_conv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_conv.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SpeakerId)> {
        self.by_conv.iter().map(|(c, s)| (c.as_str(), s))
    }

    /// Maps every side of the labelling to its true speaker.
    ///
    /// Fails if a conversation is not covered or the named speaker is not one
    /// of its labelled pair.
    pub fn side_speakers(
        &self,
        labelling: &ConversationLabelling,
    ) -> Result<BTreeMap<SideId, SpeakerId>> {
        let mut map = BTreeMap::new();
        for conv in labelling.conversations() {
            let in_l = self
                .speaker_in_l(conv.id())
                .ok_or_else(|| Error::Reference {
                    conv_id: conv.id().to_string(),
                    rule: "not covered by the reference assignment".into(),
                })?;
            let in_r = conv.speakers().other(in_l).ok_or_else(|| Error::Reference {
                conv_id: conv.id().to_string(),
                rule: format!("reference speaker {in_l} is not one of the labelled pair"),
            })?;
            map.insert(conv.side_l().clone(), in_l.clone());
            map.insert(conv.side_r().clone(), in_r.clone());
        }
        Ok(map)
    }
}

// ── CSV headers ─────────────────────────────────────────────────────────────

const CONV_HEADER: [&str; 5] = ["conv_id", "side_l", "side_r", "speaker_a", "speaker_b"];
const SCORE_HEADER: [&str; 3] = ["side_a", "side_b", "score"];
const REF_HEADER: [&str; 2] = ["conv_id", "speaker_in_l"];

fn corpus_err(file: &str, line: u64, rule: impl Into<String>) -> Error {
    Error::Corpus {
        file: file.to_string(),
        line,
        rule: rule.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })
}

fn check_header(file: &str, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(corpus_err(
            file,
            1,
            format!("expected header {:?}, found {:?}", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn read_rows<R: Read>(
    file: &str,
    reader: R,
    header: &[&str],
    mut row: impl FnMut(u64, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let hdr = rdr
        .headers()
        .map_err(|e| corpus_err(file, 1, e.to_string()))?
        .clone();
    check_header(file, &hdr, header)?;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            corpus_err(file, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(corpus_err(
                file,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        row(line, &record)?;
    }
    Ok(())
}

fn nonempty(file: &str, line: u64, name: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(corpus_err(file, line, format!("empty {name}")));
    }
    Ok(())
}

/// Parses a conversations file from a reader; `file` names it in errors.
pub fn read_conversations<R: Read>(file: &str, reader: R) -> Result<ConversationLabelling> {
    let mut conversations = Vec::new();
    let mut seen_convs: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen_sides: BTreeMap<SideId, u64> = BTreeMap::new();
    read_rows(file, reader, &CONV_HEADER, |line, rec| {
        let (conv_id, side_l, side_r, spk_a, spk_b) =
            (&rec[0], &rec[1], &rec[2], &rec[3], &rec[4]);
        for (name, value) in CONV_HEADER.iter().zip(rec.iter()) {
            nonempty(file, line, name, value)?;
        }
        if let Some(prev) = seen_convs.insert(conv_id.to_string(), line) {
            return Err(corpus_err(
                file,
                line,
                format!("duplicate conversation id {conv_id} (first seen on line {prev})"),
            ));
        }
        for side in [side_l, side_r] {
            if let Some(prev) = seen_sides.insert(SideId::new(side), line) {
                return Err(corpus_err(
                    file,
                    line,
                    format!("side {side} already used on line {prev}"),
                ));
            }
        }
        let pair = SpeakerPair::new(SpeakerId::new(spk_a), SpeakerId::new(spk_b))
            .map_err(|e| corpus_err(file, line, e.to_string()))?;
        let conv = Conversation::new(conv_id, SideId::new(side_l), SideId::new(side_r), pair)
            .map_err(|e| corpus_err(file, line, e.to_string()))?;
        conversations.push(conv);
        Ok(())
    })?;
    ConversationLabelling::new(conversations)
}

/// Parses a scores file; every side must exist in `labelling`.
pub fn read_scores<R: Read>(
    file: &str,
    reader: R,
    labelling: &ConversationLabelling,
) -> Result<ScoreMatrix> {
    let mut matrix = ScoreMatrix::new();
    read_rows(file, reader, &SCORE_HEADER, |line, rec| {
        let (side_a, side_b, score) = (&rec[0], &rec[1], &rec[2]);
        for (name, value) in SCORE_HEADER.iter().zip(rec.iter()) {
            nonempty(file, line, name, value)?;
        }
        for side in [side_a, side_b] {
            if !labelling.has_side(&SideId::new(side)) {
                return Err(corpus_err(file, line, format!("unknown side {side}")));
            }
        }
        let score: f64 = score
            .parse()
            .map_err(|_| corpus_err(file, line, format!("malformed score {score:?}")))?;
        let pair = SidePair::new(SideId::new(side_a), SideId::new(side_b))
            .map_err(|e| corpus_err(file, line, e.to_string()))?;
        matrix
            .insert(pair, score)
            .map_err(|e| corpus_err(file, line, e.to_string()))?;
        Ok(())
    })?;
    Ok(matrix)
}

/// Parses a reference file; conversations must exist and speakers must match.
pub fn read_reference<R: Read>(
    file: &str,
    reader: R,
    labelling: &ConversationLabelling,
) -> Result<ReferenceAssignment> {
    let by_id: BTreeMap<&str, &Conversation> = labelling
        .conversations()
        .iter()
        .map(|c| (c.id(), c))
        .collect();
    let mut by_conv: BTreeMap<String, SpeakerId> = BTreeMap::new();
    read_rows(file, reader, &REF_HEADER, |line, rec| {
        let (conv_id, speaker) = (&rec[0], &rec[1]);
        for (name, value) in REF_HEADER.iter().zip(rec.iter()) {
            nonempty(file, line, name, value)?;
        }
        let conv = by_id
            .get(conv_id)
            .ok_or_else(|| corpus_err(file, line, format!("unknown conversation {conv_id}")))?;
        let speaker = SpeakerId::new(speaker);
        if !conv.speakers().contains(&speaker) {
            return Err(corpus_err(
                file,
                line,
                format!("speaker {speaker} is not part of conversation {conv_id}"),
            ));
        }
        if by_conv.insert(conv_id.to_string(), speaker).is_some() {
            return Err(corpus_err(
                file,
                line,
                format!("duplicate reference for conversation {conv_id}"),
            ));
        }
        Ok(())
    })?;
    Ok(ReferenceAssignment::new(by_conv))
}

/// Loads a conversations file from disk.
pub fn load_conversations(path: impl AsRef<Path>) -> Result<ConversationLabelling> {
    let path = path.as_ref();
    read_conversations(&path.display().to_string(), open(path)?)
}

/// Loads a scores file from disk.
pub fn load_scores(
    path: impl AsRef<Path>,
    labelling: &ConversationLabelling,
) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    read_scores(&path.display().to_string(), open(path)?, labelling)
}

/// Loads a reference file from disk.
pub fn load_reference(
    path: impl AsRef<Path>,
    labelling: &ConversationLabelling,
) -> Result<ReferenceAssignment> {
    let path = path.as_ref();
    read_reference(&path.display().to_string(), open(path)?, labelling)
}

/// Loads and validates the conversation and score files together.
pub fn load_corpus(
    conversations: impl AsRef<Path>,
    scores: impl AsRef<Path>,
) -> Result<(ConversationLabelling, ScoreMatrix)> {
    let labelling = load_conversations(conversations)?;
    let matrix = load_scores(scores, &labelling)?;
    Ok((labelling, matrix))
}

fn io_err(e: csv::Error) -> Error {
    Error::Io {
        file: "<writer>".into(),
        source: std::io::Error::other(e),
    }
}

/// Writes a labelling in normalized (sorted) order.
pub fn write_conversations<W: Write>(labelling: &ConversationLabelling, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CONV_HEADER).map_err(io_err)?;
    for conv in labelling.conversations() {
        wtr.write_record([
            conv.id(),
            conv.side_l().as_str(),
            conv.side_r().as_str(),
            conv.speakers().first().as_str(),
            conv.speakers().second().as_str(),
        ])
        .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        file: "<writer>".into(),
        source: e,
    })
}

/// Writes a score matrix in normalized (sorted) order.
pub fn write_scores<W: Write>(matrix: &ScoreMatrix, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCORE_HEADER).map_err(io_err)?;
    for (pair, score) in matrix.iter() {
        wtr.write_record([pair.a().as_str(), pair.b().as_str(), &format!("{score}")])
            .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        file: "<writer>".into(),
        source: e,
    })
}

/// Writes a reference assignment in normalized (sorted) order.
pub fn write_reference<W: Write>(reference: &ReferenceAssignment, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REF_HEADER).map_err(io_err)?;
    for (conv_id, speaker) in reference.iter() {
        wtr.write_record([conv_id, speaker.as_str()]).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        file: "<writer>".into(),
        source: e,
    })
}

/// Saves a labelling to a file.
pub fn save_conversations(labelling: &ConversationLabelling, path: impl AsRef<Path>) -> Result<()> {
    write_conversations(labelling, create(path.as_ref())?)
}

/// Saves a score matrix to a file.
pub fn save_scores(matrix: &ScoreMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_scores(matrix, create(path.as_ref())?)
}

/// Saves a reference assignment to a file.
pub fn save_reference(reference: &ReferenceAssignment, path: impl AsRef<Path>) -> Result<()> {
    write_reference(reference, create(path.as_ref())?)
}

// ── Required scores ─────────────────────────────────────────────────────────

/// Component id (by speaker) for every conversation, using union-find over
/// the speaker co-occurrence graph.
fn conversation_components(labelling: &ConversationLabelling) -> Vec<usize> {
    let speakers: Vec<&SpeakerId> = labelling.speakers().collect();
    let index_of: BTreeMap<&SpeakerId, usize> =
        speakers.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut uf = UnionFind::new(speakers.len());
    for conv in labelling.conversations() {
        uf.union(
            index_of[conv.speakers().first()],
            index_of[conv.speakers().second()],
        );
    }
    labelling
        .conversations()
        .iter()
        .map(|c| uf.find(index_of[c.speakers().first()]))
        .collect()
}

/// Every unordered side pair inference can consume: sides of different
/// conversations within the same clique. A clique of M_S conversations
/// contributes 4·C(M_S, 2) pairs.
pub fn required_pairs(labelling: &ConversationLabelling) -> BTreeSet<SidePair> {
    let components = conversation_components(labelling);
    let mut by_component: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (conv_idx, comp) in components.iter().enumerate() {
        by_component.entry(*comp).or_default().push(conv_idx);
    }
    let convs = labelling.conversations();
    let mut pairs = BTreeSet::new();
    for members in by_component.values() {
        for (i, &ci) in members.iter().enumerate() {
            for &cj in &members[i + 1..] {
                for x in [convs[ci].side_l(), convs[ci].side_r()] {
                    for y in [convs[cj].side_l(), convs[cj].side_r()] {
                        let pair = SidePair::new(x.clone(), y.clone())
                            .expect("sides of different conversations are distinct");
                        pairs.insert(pair);
                    }
                }
            }
        }
    }
    pairs
}

/// Completeness report for a score matrix against a labelling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScoreValidation {
    /// Required pairs absent from the matrix.
    pub missing: Vec<SidePair>,
    /// Entries present but never consumed by inference (cross-clique or
    /// within-conversation pairs).
    pub ignored_extra: usize,
}

impl ScoreValidation {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Lists missing required pairs and counts ignored extras. Report-only.
pub fn validate_scores(
    labelling: &ConversationLabelling,
    matrix: &ScoreMatrix,
) -> ScoreValidation {
    let required = required_pairs(labelling);
    let missing = required
        .iter()
        .filter(|p| matrix.get(p).is_none())
        .cloned()
        .collect();
    let ignored_extra = matrix
        .iter()
        .filter(|(p, _)| !required.contains(*p))
        .count();
    ScoreValidation {
        missing,
        ignored_extra,
    }
}
