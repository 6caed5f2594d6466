//! Typed adjacency over users, tags, and items: the legal hop structure
//! for reasoning paths.
//!
//! Edges are user→tag (tags of items the user interacted with in training),
//! tag→tag (undirected co-occurrence: at least `cooccur_threshold` distinct
//! items carry both tags), and tag→item (the tag assignment itself). Items
//! are terminal; there are no direct user→item edges, so every path routes
//! through at least one tag. Adjacency lists are sorted index vectors,
//! making traversal order deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Interaction;
use crate::sphere::{EntityCounts, EntityId, EntityKind};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("entity {0:?} does not exist in this graph")]
    UnknownEntity(EntityId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub users: usize,
    pub items: usize,
    pub tags: usize,
    /// Users with no training interactions on any tagged item. They stay in
    /// the graph but can reach nothing.
    pub zero_tag_users: usize,
    pub user_tag_edges: usize,
    /// Undirected tag pairs meeting the co-occurrence threshold.
    pub tag_tag_pairs: usize,
    pub tag_item_edges: usize,
    pub cooccur_threshold: usize,
}

/// Immutable hop structure built from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGraph {
    counts: EntityCounts,
    user_tags: Vec<Vec<u32>>,
    tag_tags: Vec<Vec<u32>>,
    tag_items: Vec<Vec<u32>>,
    item_tags: Vec<Vec<u32>>,
    cooccur_threshold: usize,
}

/// Builds the graph from training interactions and the full tag assignment.
/// Only the training split may be passed in: user→tag edges derived from
/// held-out rows would leak evaluation signal.
pub fn build_graph(
    train: &[Interaction],
    item_tag_pairs: &[(u32, u32)],
    counts: EntityCounts,
    cooccur_threshold: usize,
) -> SemanticGraph {
    let mut item_tags = vec![Vec::new(); counts.items];
    let mut tag_items = vec![Vec::new(); counts.tags];
    for &(item, tag) in item_tag_pairs {
        item_tags[item as usize].push(tag);
        tag_items[tag as usize].push(item);
    }
    for list in item_tags.iter_mut().chain(tag_items.iter_mut()) {
        list.sort_unstable();
        list.dedup();
    }

    let mut user_tags = vec![Vec::new(); counts.users];
    for r in train {
        user_tags[r.user as usize].extend_from_slice(&item_tags[r.item as usize]);
    }
    for list in &mut user_tags {
        list.sort_unstable();
        list.dedup();
    }

    let mut pair_counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for tags in &item_tags {
        for (i, &a) in tags.iter().enumerate() {
            for &b in &tags[i + 1..] {
                *pair_counts.entry((a, b)).or_default() += 1;
            }
        }
    }
    let mut tag_tags = vec![Vec::new(); counts.tags];
    for (&(a, b), &n) in &pair_counts {
        if n >= cooccur_threshold {
            tag_tags[a as usize].push(b);
            tag_tags[b as usize].push(a);
        }
    }
    for list in &mut tag_tags {
        list.sort_unstable();
    }

    let g = SemanticGraph {
        counts,
        user_tags,
        tag_tags,
        tag_items,
        item_tags,
        cooccur_threshold,
    };
    debug_assert!(g.verify().is_ok(), "graph construction broke its invariants");
    g
}

impl SemanticGraph {
    pub fn counts(&self) -> EntityCounts {
        self.counts
    }

    pub fn user_tags(&self, user: u32) -> &[u32] {
        &self.user_tags[user as usize]
    }

    pub fn tag_tags(&self, tag: u32) -> &[u32] {
        &self.tag_tags[tag as usize]
    }

    pub fn tag_items(&self, tag: u32) -> &[u32] {
        &self.tag_items[tag as usize]
    }

    pub fn item_tags(&self, item: u32) -> &[u32] {
        &self.item_tags[item as usize]
    }

    pub fn contains(&self, e: EntityId) -> bool {
        let span = match e.kind {
            EntityKind::User => self.counts.users,
            EntityKind::Item => self.counts.items,
            EntityKind::Tag => self.counts.tags,
        };
        (e.index as usize) < span
    }

    /// Whether `tag` maps to `item`, by binary search on the sorted list.
    pub fn tag_has_item(&self, tag: u32, item: u32) -> bool {
        self.tag_items[tag as usize].binary_search(&item).is_ok()
    }

    /// Legal next hops from an entity: users reach their tags, tags reach
    /// co-occurring tags and their items, items are terminal.
    pub fn neighbors(&self, e: EntityId) -> Result<Vec<EntityId>, GraphError> {
        if !self.contains(e) {
            return Err(GraphError::UnknownEntity(e));
        }
        Ok(match e.kind {
            EntityKind::User => self.user_tags(e.index).iter().map(|&t| EntityId::tag(t)).collect(),
            EntityKind::Tag => self
                .tag_tags(e.index)
                .iter()
                .map(|&t| EntityId::tag(t))
                .chain(self.tag_items(e.index).iter().map(|&i| EntityId::item(i)))
                .collect(),
            EntityKind::Item => Vec::new(),
        })
    }

    /// Cross-checks the structural invariants: tag_items/item_tags are
    /// exact inverses, tag_tags is symmetric with no self-loops, all
    /// adjacency sorted and deduplicated.
    pub fn verify(&self) -> Result<(), String> {
        let sorted = |v: &[u32]| v.windows(2).all(|w| w[0] < w[1]);
        for (label, lists) in [
            ("user_tags", &self.user_tags),
            ("tag_tags", &self.tag_tags),
            ("tag_items", &self.tag_items),
            ("item_tags", &self.item_tags),
        ] {
            if let Some(i) = lists.iter().position(|l| !sorted(l)) {
                return Err(format!("{label}[{i}] is not sorted+deduplicated"));
            }
        }
        for (item, tags) in self.item_tags.iter().enumerate() {
            for &t in tags {
                if !self.tag_has_item(t, item as u32) {
                    return Err(format!("item {item} lists tag {t} but not vice versa"));
                }
            }
        }
        for (tag, items) in self.tag_items.iter().enumerate() {
            for &i in items {
                if self.item_tags[i as usize].binary_search(&(tag as u32)).is_err() {
                    return Err(format!("tag {tag} lists item {i} but not vice versa"));
                }
            }
        }
        for (tag, others) in self.tag_tags.iter().enumerate() {
            for &o in others {
                if o as usize == tag {
                    return Err(format!("tag {tag} has a self-loop"));
                }
                if self.tag_tags[o as usize].binary_search(&(tag as u32)).is_err() {
                    return Err(format!("tag_tags edge {tag}->{o} has no reverse"));
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> GraphReport {
        GraphReport {
            users: self.counts.users,
            items: self.counts.items,
            tags: self.counts.tags,
            zero_tag_users: self.user_tags.iter().filter(|l| l.is_empty()).count(),
            user_tag_edges: self.user_tags.iter().map(Vec::len).sum(),
            tag_tag_pairs: self.tag_tags.iter().map(Vec::len).sum::<usize>() / 2,
            tag_item_edges: self.tag_items.iter().map(Vec::len).sum(),
            cooccur_threshold: self.cooccur_threshold,
        }
    }
}
