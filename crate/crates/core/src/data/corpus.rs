//! Plain-text corpus loading for toy language-model pretraining.
//!
//! A corpus is a set of byte-sequence documents, split into train and
//! held-out partitions by document index, so the two never share text.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tokenizer;
use crate::train::BatchSource;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no .txt documents found in {0}")]
    NoDocuments(String),
    #[error("no document is long enough for seq_len {0}")]
    SequencesTooLong(usize),
}

/// A handful of Aesop's fables (public domain) so the crate trains out of the
/// box without external data.
const BUNDLED: &[&str] = &[
    "The Hare and the Tortoise. A hare was making fun of the tortoise for being so slow. \
     Do you ever get anywhere, he asked with a mocking laugh. Yes, replied the tortoise, \
     and I get there sooner than you think. I will run you a race and prove it. The hare \
     was much amused at the idea of running a race with the tortoise, but agreed for the \
     fun of the thing. So the fox, who had consented to act as judge, marked the distance \
     and started the runners off. The hare was soon far out of sight, and to make the \
     tortoise feel how ridiculous it was for him to try a race with a hare, he lay down \
     beside the course to take a nap until the tortoise should catch up. The tortoise \
     meanwhile kept going slowly but steadily, and after a time passed the place where \
     the hare was sleeping. The hare slept on peacefully, and when at last he did wake \
     up, the tortoise was near the goal. The hare now ran his swiftest, but he could not \
     overtake the tortoise in time. The race is not always to the swift.",
    "The North Wind and the Sun. The north wind and the sun had a quarrel about which of \
     them was the stronger. While they were disputing with much heat and bluster, a \
     traveler passed along the road wrapped in a cloak. Let us agree, said the sun, that \
     he is the stronger who can strip that traveler of his cloak. Very well, growled the \
     north wind, and at once sent a cold, howling blast against the traveler. With the \
     first gust of wind the ends of the cloak whipped about the traveler's body. But he \
     immediately wrapped it closely around him, and the harder the wind blew, the \
     tighter he held it to him. The north wind tore angrily at the cloak, but all his \
     efforts were in vain. Then the sun began to shine. At first his beams were gentle, \
     and in the pleasant warmth after the bitter cold of the north wind, the traveler \
     unfastened his cloak and let it hang loosely from his shoulders. The sun's rays \
     grew warmer and warmer. The man took off his cap and mopped his brow. At last he \
     became so heated that he pulled off his cloak, and to escape the blazing sunshine, \
     threw himself down in the welcome shade of a tree by the roadside. Gentleness and \
     kind persuasion win where force and bluster fail.",
    "The Crow and the Pitcher. In a spell of dry weather, when the birds could find very \
     little to drink, a thirsty crow found a pitcher with a little water in it. But the \
     pitcher was high and had a narrow neck, and no matter how he tried, the crow could \
     not reach the water. The poor thing felt as if he must die of thirst. Then an idea \
     came to him. Picking up some small pebbles, he dropped them into the pitcher one by \
     one. With each pebble the water rose a little higher until at last it was near \
     enough so he could drink. In a pinch a good use of our wits may help us out.",
    "The Lion and the Mouse. A lion lay asleep in the forest, his great head resting on \
     his paws. A timid little mouse came upon him unexpectedly, and in her fright and \
     haste to get away, ran across the lion's nose. Roused from his nap, the lion laid \
     his huge paw angrily on the tiny creature to kill her. Spare me, begged the poor \
     mouse. Please let me go and some day I will surely repay you. The lion was much \
     amused to think that a mouse could ever help him. But he was generous and finally \
     let the mouse go. Some days later, while stalking his prey in the forest, the lion \
     was caught in the toils of a hunter's net. Unable to free himself, he filled the \
     forest with his angry roaring. The mouse knew the voice and quickly found the lion \
     struggling in the net. Running to one of the great ropes that bound him, she gnawed \
     it until it parted, and soon the lion was free. You laughed when I said I would \
     repay you, said the mouse. Now you see that even a mouse can help a lion. A \
     kindness is never wasted.",
    "The Fox and the Grapes. A fox one day spied a beautiful bunch of ripe grapes \
     hanging from a vine trained along the branches of a tree. The grapes seemed ready \
     to burst with juice, and the fox's mouth watered as he gazed longingly at them. The \
     bunch hung from a high branch, and the fox had to jump for it. The first time he \
     jumped he missed it by a long way. So he walked off a short distance and took a \
     running leap at it, only to fall short once more. Again and again he tried, but in \
     vain. Now he sat down and looked at the grapes in disgust. What a fool I am, he \
     said. Here I am wearing myself out to get a bunch of sour grapes that are not worth \
     gaping for. And off he walked very, very scornfully. There are many who pretend to \
     despise and belittle that which is beyond their reach.",
    "The Shepherd Boy and the Wolf. A shepherd boy tended his master's sheep near a dark \
     forest not far from the village. Soon he found life in the pasture very dull. All \
     he could do to amuse himself was to talk to his dog or play on his shepherd's pipe. \
     One day as he sat watching the sheep and the quiet forest, and thinking what he \
     would do should he see a wolf, he thought of a plan to amuse himself. His master \
     had told him to call for help should a wolf attack the flock, and the villagers \
     would drive it away. So now, though he had not seen anything that even looked like \
     a wolf, he ran toward the village shouting at the top of his voice, wolf, wolf. As \
     he expected, the villagers who heard the cry dropped their work and ran in great \
     excitement to the pasture. But when they got there they found the boy doubled up \
     with laughter at the trick he had played on them. A few days later the shepherd boy \
     again shouted, wolf, wolf. Again the villagers ran to help him, only to be laughed \
     at again. Then one evening as the sun was setting behind the forest and the shadows \
     were creeping out over the pasture, a wolf really did spring from the underbrush \
     and fall upon the sheep. In terror the boy ran toward the village shouting wolf, \
     wolf. But though the villagers heard the cry, they did not run to help him as they \
     had before. He cannot fool us again, they said. The wolf killed a great many of the \
     boy's sheep and then slipped away into the forest. Liars are not believed even when \
     they speak the truth.",
    "The Ants and the Grasshopper. One bright day in late autumn a family of ants were \
     bustling about in the warm sunshine, drying out the grain they had stored up during \
     the summer, when a starving grasshopper, his fiddle under his arm, came up and \
     humbly begged for a bite to eat. What, cried the ants in surprise, have you not \
     stored anything away for the winter? What in the world were you doing all last \
     summer? I did not have time to store up any food, whined the grasshopper. I was so \
     busy making music that before I knew it the summer was gone. The ants shrugged \
     their shoulders in disgust. Making music, were you, they cried. Very well, now \
     dance! And they turned their backs on the grasshopper and went on with their work. \
     There is a time for work and a time for play.",
    "The Dog and His Reflection. A dog, to whom the butcher had thrown a bone, was \
     hurrying home with his prize as fast as he could go. As he crossed a narrow \
     footbridge, he happened to look down and saw himself reflected in the quiet water \
     as if in a mirror. But the greedy dog thought he saw a real dog carrying a bone \
     much bigger than his own. If he had stopped to think he would have known better. \
     But instead of thinking, he dropped his bone and sprang at the dog in the river, \
     only to find himself swimming for dear life to reach the shore. At last he managed \
     to scramble out, and as he stood sadly thinking about the good bone he had lost, he \
     realized what a stupid dog he had been. It is very foolish to be greedy.",
];

/// Byte-sequence documents split by document into train and held-out sets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Vec<u8>>,
    pub held_out: Vec<Vec<u8>>,
}

impl Corpus {
    /// Every `held_out_every`-th document (1-based) lands in the held-out
    /// split; the splits are disjoint by construction.
    pub fn from_documents(docs: Vec<Vec<u8>>, held_out_every: usize) -> Corpus {
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        for (i, doc) in docs.into_iter().enumerate() {
            if held_out_every > 1 && (i + 1) % held_out_every == 0 {
                held_out.push(doc);
            } else {
                train.push(doc);
            }
        }
        Corpus { train, held_out }
    }

    /// Load every `.txt` file under `dir` (sorted by name, one document per
    /// file).
    pub fn load_dir(dir: impl AsRef<Path>, held_out_every: usize) -> Result<Corpus, CorpusError> {
        let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CorpusError::NoDocuments(
                dir.as_ref().display().to_string(),
            ));
        }
        let mut docs = Vec::with_capacity(paths.len());
        for p in paths {
            docs.push(fs::read(p)?);
        }
        Ok(Corpus::from_documents(docs, held_out_every))
    }

    /// The embedded fallback corpus.
    pub fn bundled() -> Corpus {
        Corpus::from_documents(
            BUNDLED.iter().map(|s| s.as_bytes().to_vec()).collect(),
            4,
        )
    }

    /// Unbounded synthetic prose from a small template grammar. Fresh
    /// documents for every seed, so long pretraining runs measure
    /// generalization instead of memorizing a fixed text.
    pub fn synthetic(n_docs: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5e_d0c5);
        let docs = (0..n_docs).map(|_| synthetic_document(&mut rng)).collect();
        Corpus::from_documents(docs, 8)
    }
}

const NOUNS: &[&str] = &[
    "river", "stone", "garden", "lantern", "harbor", "meadow", "window", "letter", "basket",
    "bridge", "forest", "candle", "mountain", "village", "shadow", "teacher", "sailor", "farmer",
    "painter", "doctor", "market", "island", "winter", "morning", "evening", "road", "house",
    "door", "bird", "horse", "fish", "tree", "cloud", "storm", "field", "bell", "book", "song",
    "fire", "wall", "archive", "compass", "ledger", "orchard", "stairway", "chimney", "harvest",
    "council", "workshop", "carriage", "festival", "granary", "lighthouse", "monastery",
    "pasture", "quarry", "saddle", "telescope", "vineyard", "waterfall", "anchor", "barrel",
    "cellar", "drawer", "engine", "fountain", "glacier", "hammer", "inkwell", "journal",
];

const VERBS: &[&str] = &[
    "watched", "carried", "followed", "crossed", "opened", "painted", "remembered", "found",
    "built", "repaired", "visited", "described", "measured", "gathered", "planted", "reached",
    "traded", "studied", "counted", "guarded", "cleaned", "borrowed", "sold", "moved",
    "arranged", "balanced", "collected", "delivered", "examined", "finished", "greeted",
    "hauled", "inspected", "kept", "loaded", "mended", "noticed", "observed", "packed",
    "questioned", "recorded", "sharpened", "tightened", "unloaded", "weighed",
];

const ADJECTIVES: &[&str] = &[
    "quiet", "old", "bright", "narrow", "heavy", "green", "distant", "small", "warm", "cold",
    "broken", "empty", "golden", "steep", "early", "late", "wide", "dark", "simple", "busy",
    "crooked", "dusty", "faded", "gentle", "hollow", "iron", "low", "misty", "pale", "rough",
    "silver", "tall", "uneven", "worn", "young", "ancient", "curious", "patient",
];

const NAMES: &[&str] = &[
    "mara", "jonas", "edith", "tomas", "lena", "victor", "anna", "oskar", "ruth", "felix",
    "clara", "ivan", "nora", "pavel", "selma", "arthur", "beatrice", "casper", "dora", "elias",
    "freya", "gustav", "hanna", "isak", "johanna", "karl", "liv", "matthias",
];

const ADVERBS: &[&str] = &[
    "slowly", "carefully", "often", "quietly", "early", "together", "alone", "again", "soon",
    "finally", "rarely", "gladly", "barely", "twice", "halfway", "at once", "by hand",
    "without a word", "before dawn", "after dark",
];

const PLACES: &[&str] = &[
    "by the gate", "under the elm", "behind the mill", "along the shore", "near the well",
    "at the crossing", "beyond the ridge", "inside the barn", "above the falls",
    "past the old wall",
];

const CONNECTIVES: &[&str] = &[
    "and", "but", "so", "while", "because", "although", "until", "before", "after",
];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn noun_phrase(rng: &mut ChaCha8Rng) -> String {
    let det = ["the", "a", "one", "every", "that", "each"][rng.gen_range(0..6)];
    let mut out = String::from(det);
    if rng.gen_bool(0.5) {
        out.push(' ');
        out.push_str(pick(rng, ADJECTIVES));
    }
    out.push(' ');
    let plural = rng.gen_bool(0.2);
    let noun = pick(rng, NOUNS);
    out.push_str(noun);
    if plural && !noun.ends_with('s') {
        out.push('s');
    }
    if rng.gen_bool(0.25) {
        out.push_str(" of ");
        let tail = pick(rng, NOUNS);
        out.push_str(tail);
        if !tail.ends_with('s') {
            out.push('s');
        }
    }
    out
}

fn subject(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.4) {
        pick(rng, NAMES).to_string()
    } else {
        noun_phrase(rng)
    }
}

fn clause(rng: &mut ChaCha8Rng) -> String {
    let mut out = format!("{} {} {}", subject(rng), pick(rng, VERBS), noun_phrase(rng));
    if rng.gen_bool(0.45) {
        out.push(' ');
        out.push_str(pick(rng, PLACES));
    }
    if rng.gen_bool(0.3) {
        out.push(' ');
        out.push_str(pick(rng, ADVERBS));
    }
    out
}

fn synthetic_sentence(rng: &mut ChaCha8Rng) -> String {
    let mut out = match rng.gen_range(0..5) {
        0 => clause(rng),
        1 => format!("{}, {} {}", clause(rng), pick(rng, CONNECTIVES), clause(rng)),
        2 => format!(
            "in the {} {} {}",
            pick(rng, NOUNS),
            pick(rng, ADVERBS),
            clause(rng)
        ),
        3 => format!(
            "{} said that {}",
            pick(rng, NAMES),
            clause(rng)
        ),
        _ => format!(
            "the {} of {} was {} {}",
            pick(rng, NOUNS),
            pick(rng, NAMES),
            pick(rng, ADJECTIVES),
            pick(rng, PLACES)
        ),
    };
    // occasional dated or counted detail keeps digits in distribution
    if rng.gen_bool(0.15) {
        out.push_str(&format!(" for {} days", rng.gen_range(2..30)));
    } else if rng.gen_bool(0.1) {
        out.push_str(&format!(" in 18{}{}", rng.gen_range(0..10), rng.gen_range(0..10)));
    }
    out.push('.');
    // sentence case
    let mut chars = out.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => out,
    }
}

fn synthetic_document(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let sentences = rng.gen_range(8..16);
    let mut doc = String::new();
    for i in 0..sentences {
        if i > 0 {
            doc.push(' ');
        }
        doc.push_str(&synthetic_sentence(rng));
    }
    doc.into_bytes()
}

/// Next-token windows drawn uniformly from the train documents, plus a fixed
/// grid of held-out windows for evaluation.
pub struct LmWindows {
    train_tokens: Vec<Vec<u32>>,
    seq_len: usize,
    eval: Vec<(Vec<u32>, Vec<u32>)>,
}

impl LmWindows {
    pub fn new(corpus: &Corpus, seq_len: usize, max_eval_windows: usize) -> Result<Self, CorpusError> {
        let tokenized: Vec<Vec<u32>> = corpus
            .train
            .iter()
            .map(|d| tokenizer::tokenize(d))
            .filter(|t| t.len() > seq_len)
            .collect();
        if tokenized.is_empty() {
            return Err(CorpusError::SequencesTooLong(seq_len));
        }
        let mut eval = Vec::new();
        'outer: for doc in &corpus.held_out {
            let ids = tokenizer::tokenize(doc);
            let mut start = 0;
            while start + seq_len < ids.len() {
                let w = &ids[start..start + seq_len + 1];
                eval.push((w[..seq_len].to_vec(), w[1..].to_vec()));
                if eval.len() >= max_eval_windows {
                    break 'outer;
                }
                start += seq_len;
            }
        }
        Ok(LmWindows {
            train_tokens: tokenized,
            seq_len,
            eval,
        })
    }
}

impl BatchSource for LmWindows {
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<u32>, Vec<u32>)> {
        (0..batch_size)
            .map(|_| {
                let doc = &self.train_tokens[rng.gen_range(0..self.train_tokens.len())];
                let start = rng.gen_range(0..doc.len() - self.seq_len);
                let w = &doc[start..start + self.seq_len + 1];
                (w[..self.seq_len].to_vec(), w[1..].to_vec())
            })
            .collect()
    }

    fn eval_set(&self) -> &[(Vec<u32>, Vec<u32>)] {
        &self.eval
    }
}
