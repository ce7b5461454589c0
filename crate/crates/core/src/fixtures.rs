//! Small graphs for tests, demos and the `ingest --synthetic` command.

use rand::Rng;

use crate::error::Result;
use crate::kg::{build_index, EntityId, GraphIndex, RelationId, Triple, Vocab};
use crate::rng::seeded;

/// A vocabulary with its raw facts.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub vocab: Vocab,
    pub facts: Vec<Triple>,
}

impl Fixture {
    fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut vocab = Vocab::new();
        let facts = edges
            .into_iter()
            .map(|(s, p, o)| {
                let s = vocab.intern_entity(s);
                let p = vocab.intern_relation(p).expect("fixture relation names are distinct");
                let o = vocab.intern_entity(o);
                Triple::new(s, p, o)
            })
            .collect();
        Self { vocab, facts }
    }

    pub fn index(&self) -> GraphIndex {
        build_index(&self.vocab, &self.facts).expect("fixture facts are valid")
    }

    pub fn entity(&self, name: &str) -> EntityId {
        self.vocab
            .entity_id(name)
            .unwrap_or_else(|| panic!("fixture has no entity {name:?}"))
    }

    pub fn relation(&self, name: &str) -> RelationId {
        self.vocab
            .relation_id(name)
            .unwrap_or_else(|| panic!("fixture has no relation {name:?}"))
    }

    pub fn triple(&self, s: &str, p: &str, o: &str) -> Triple {
        Triple::new(self.entity(s), self.relation(p), self.entity(o))
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        crate::kg::write_triples(&self.vocab, &self.facts, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("names are utf-8")
    }
}

const FIGURE_ONE: [(&str, &str, &str); 12] = [
    ("Michael Jordan", "plays_for", "Chicago Bulls"),
    ("Michael Jordan", "plays_for", "Washington Wizzards"),
    ("Chicago Bulls", "team_of", "NBA"),
    ("Washington Wizzards", "team_of", "NBA"),
    ("Michael Jordan", "plays_for", "Chicago White Sox"),
    ("Chicago White Sox", "team_of", "MLB"),
    ("Michael Jordan", "has_gender", "male"),
    ("Michael Jordan", "plays_role_in", "Space Jam"),
    ("Michael Jordan", "has_nationality", "USA"),
    ("Space Jam", "has_genre", "Children's Movie"),
    ("Space Jam", "produced_in", "USA"),
    ("Michael Jordan", "has_profession", "Basketball player"),
];

/// The Michael Jordan basketball graph: 11 entities, 12 edges.
pub fn figure_one() -> Fixture {
    Fixture::from_edges(FIGURE_ONE)
}

pub fn figure_one_tsv() -> String {
    FIGURE_ONE
        .iter()
        .map(|(s, p, o)| format!("{s}\t{p}\t{o}\n"))
        .collect()
}

/// One start node with a rewarded and an unrewarded arm. The query relation
/// `asks` exists in the vocabulary but not in the graph.
pub fn bandit() -> Fixture {
    let mut fx = Fixture::from_edges([("start", "arm_good", "good"), ("start", "arm_bad", "bad")]);
    fx.vocab.intern_relation("asks").expect("fresh name");
    fx
}

/// Shape of the generated nationality graph.
#[derive(Debug, Clone)]
pub struct RuleGraphConfig {
    pub persons: usize,
    pub cities: usize,
    pub countries: usize,
    pub professions: usize,
    pub languages: usize,
    pub friends_per_person: usize,
    pub seed: u64,
}

impl Default for RuleGraphConfig {
    fn default() -> Self {
        Self {
            persons: 140,
            cities: 36,
            countries: 8,
            professions: 10,
            languages: 6,
            friends_per_person: 2,
            seed: 17,
        }
    }
}

/// A graph where `nationality(x, c)` holds iff `x` was born in a city
/// located in `c`. Distractors: `lives_in` (a random, usually foreign city),
/// `friend_of`, `works_as` and `speaks` edges.
pub fn nationality_rule_graph(config: &RuleGraphConfig) -> Result<Fixture> {
    let mut rng = seeded(config.seed);
    let mut vocab = Vocab::new();
    let persons: Vec<_> = (0..config.persons)
        .map(|i| vocab.intern_entity(&format!("person_{i}")))
        .collect();
    let cities: Vec<_> = (0..config.cities)
        .map(|i| vocab.intern_entity(&format!("city_{i}")))
        .collect();
    let countries: Vec<_> = (0..config.countries)
        .map(|i| vocab.intern_entity(&format!("country_{i}")))
        .collect();
    let professions: Vec<_> = (0..config.professions)
        .map(|i| vocab.intern_entity(&format!("profession_{i}")))
        .collect();
    let languages: Vec<_> = (0..config.languages)
        .map(|i| vocab.intern_entity(&format!("language_{i}")))
        .collect();

    let born_in = vocab.intern_relation("born_in")?;
    let located_in = vocab.intern_relation("located_in")?;
    let nationality = vocab.intern_relation("nationality")?;
    let lives_in = vocab.intern_relation("lives_in")?;
    let friend_of = vocab.intern_relation("friend_of")?;
    let works_as = vocab.intern_relation("works_as")?;
    let speaks = vocab.intern_relation("speaks")?;

    let mut facts = Vec::new();
    let city_country: Vec<usize> = (0..cities.len()).map(|i| i % countries.len()).collect();
    for (i, &city) in cities.iter().enumerate() {
        facts.push(Triple::new(city, located_in, countries[city_country[i]]));
    }
    for (i, &country) in countries.iter().enumerate() {
        facts.push(Triple::new(country, speaks, languages[i % languages.len()]));
    }
    for &person in &persons {
        let birth = rng.random_range(0..cities.len());
        facts.push(Triple::new(person, born_in, cities[birth]));
        facts.push(Triple::new(person, nationality, countries[city_country[birth]]));
        let home = rng.random_range(0..cities.len());
        if home != birth {
            facts.push(Triple::new(person, lives_in, cities[home]));
        }
        facts.push(Triple::new(
            person,
            works_as,
            professions[rng.random_range(0..professions.len())],
        ));
        for _ in 0..config.friends_per_person {
            let friend = persons[rng.random_range(0..persons.len())];
            if friend != person {
                facts.push(Triple::new(person, friend_of, friend));
            }
        }
    }
    Ok(Fixture { vocab, facts })
}
