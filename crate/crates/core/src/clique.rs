//! Decomposition of a corpus into independent cliques: connected components
//! of the graph whose nodes are speakers and whose edges are conversations.
//! Each clique is the unit of tractable posterior inference.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Conversation, ConversationLabelling, SpeakerId};
use crate::union_find::UnionFind;

/// Refuse to enumerate cliques with more conversations than this by default
/// (2^24 ≈ 16.7M configurations); the cost grows exponentially with M_S.
pub const DEFAULT_COMPLEXITY_CAP: usize = 24;

/// A connected set of conversations sharing speakers, with no speaker shared
/// outside it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clique {
    clique_id: String,
    conversations: Vec<Conversation>,
    speakers: BTreeSet<SpeakerId>,
}

impl Clique {
    /// Deterministic id: the lexicographically smallest member speaker id.
    pub fn id(&self) -> &str {
        &self.clique_id
    }

    /// Conversations in conv-id order; their positions define configuration
    /// bit indices.
    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn speakers(&self) -> &BTreeSet<SpeakerId> {
        &self.speakers
    }

    /// Number of conversations M_S.
    pub fn n_conversations(&self) -> usize {
        self.conversations.len()
    }

    /// Number of configurations |C| = 2^M_S, saturating for absurdly large
    /// cliques (which can never be enumerated anyway).
    pub fn complexity(&self) -> u128 {
        1u128
            .checked_shl(self.n_conversations() as u32)
            .unwrap_or(u128::MAX)
    }

    pub fn resolvability(&self) -> Resolvability {
        classify(self)
    }

    pub fn is_resolvable(&self) -> bool {
        self.resolvability() == Resolvability::Resolvable
    }
}

/// Whether speaker recognition can in principle settle the absolute channel
/// attribution of a clique.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolvability {
    Resolvable,
    Unresolvable,
}

/// A clique with exactly two speakers is unresolvable: swapping the speakers
/// maps every configuration to its channel flip with identical likelihood.
/// This covers both the single-conversation case and the same pair recurring.
pub fn classify(clique: &Clique) -> Resolvability {
    if clique.speakers.len() == 2 {
        Resolvability::Unresolvable
    } else {
        Resolvability::Resolvable
    }
}

/// Splits the corpus into cliques, sorted by clique id. Every conversation
/// lands in exactly one clique.
pub fn decompose(labelling: &ConversationLabelling) -> Vec<Clique> {
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
    let mut groups: BTreeMap<usize, Vec<&Conversation>> = BTreeMap::new();
    for conv in labelling.conversations() {
        let root = uf.find(index_of[conv.speakers().first()]);
        groups.entry(root).or_default().push(conv);
    }
    let mut cliques: Vec<Clique> = groups
        .into_values()
        .map(|convs| {
            let speakers: BTreeSet<SpeakerId> = convs
                .iter()
                .flat_map(|c| [c.speakers().first().clone(), c.speakers().second().clone()])
                .collect();
            let clique_id = speakers
                .iter()
                .next()
                .expect("clique has speakers")
                .as_str()
                .to_string();
            Clique {
                clique_id,
                conversations: convs.into_iter().cloned().collect(),
                speakers,
            }
        })
        .collect();
    cliques.sort_by(|a, b| a.clique_id.cmp(&b.clique_id));
    cliques
}

/// Groups cliques by |C| = 2^M_S.
pub fn complexity_histogram(cliques: &[Clique]) -> BTreeMap<u128, usize> {
    let mut histogram = BTreeMap::new();
    for clique in cliques {
        *histogram.entry(clique.complexity()).or_insert(0) += 1;
    }
    histogram
}
