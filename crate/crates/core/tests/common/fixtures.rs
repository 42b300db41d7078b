//! Small random databases with a catalog whose frequencies are exact.

use std::collections::HashMap;

use dpsql_core::algebra::{Attribute, Catalog, ScalarType, Schema};
use dpsql_core::eval::{Database, Table, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Protected `trips(trip_id, driver_id, city_id)`, public
/// `drivers(id, city_id)` keyed by id, public `promos(promo_id, city_id)`
/// and the key domain `keys(city_id)`.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub trips: Vec<(i64, i64)>,
    pub drivers: Vec<i64>,
    pub promos: Vec<i64>,
    pub cities: i64,
}

fn max_frequency(values: impl Iterator<Item = i64>) -> u64 {
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_values().max().unwrap_or(0).max(1)
}

fn table(name: &str, cols: &[&str], rows: Vec<Vec<i64>>) -> Table {
    let schema = Schema {
        attrs: cols
            .iter()
            .map(|c| Attribute { qualifier: Some(name.to_string()), name: c.to_string(), ty: ScalarType::Int })
            .collect(),
    };
    Table::new(schema, rows.into_iter().map(|r| r.into_iter().map(Value::Int).collect()).collect())
}

impl Fixture {
    /// Up to `max_trips` trips over `drivers` drivers and `cities` cities.
    pub fn random(seed: u64, max_trips: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cities = rng.random_range(2..=5);
        let drivers = (0..rng.random_range(2..=6)).map(|_| rng.random_range(0..cities)).collect::<Vec<_>>();
        let trips = (0..rng.random_range(1..=max_trips))
            .map(|_| (rng.random_range(0..drivers.len() as i64), rng.random_range(0..cities)))
            .collect();
        let promos = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..cities)).collect();
        Fixture { trips, drivers, promos, cities }
    }

    pub fn catalog(&self) -> Catalog {
        let mf_driver = max_frequency(self.trips.iter().map(|t| t.0));
        let mf_city = max_frequency(self.trips.iter().map(|t| t.1));
        let mf_driver_city = max_frequency(self.drivers.iter().copied());
        let mf_promo = max_frequency(self.promos.iter().copied());
        Catalog::from_json(&format!(
            r#"{{"tables":[
            {{"name":"trips","protected":true,"rowCount":{n},"primaryKey":["trip_id"],
             "columns":[{{"name":"trip_id","type":"int"}},
                        {{"name":"driver_id","type":"int","maxFrequency":{mf_driver}}},
                        {{"name":"city_id","type":"int","maxFrequency":{mf_city},
                          "domainSource":{{"table":"keys","column":"city_id"}}}}]}},
            {{"name":"drivers","primaryKey":["id"],
             "columns":[{{"name":"id","type":"int"}},{{"name":"city_id","type":"int","maxFrequency":{mf_driver_city}}}]}},
            {{"name":"promos","primaryKey":["promo_id"],
             "columns":[{{"name":"promo_id","type":"int"}},{{"name":"city_id","type":"int","maxFrequency":{mf_promo}}}]}},
            {{"name":"keys","primaryKey":["city_id"],"columns":[{{"name":"city_id","type":"int"}}]}}]}}"#,
            n = self.trips.len().max(1),
        ))
        .expect("fixture catalog")
    }

    pub fn database(&self) -> Database {
        let mut db = Database::new();
        let trips = self.trips.iter().enumerate().map(|(i, &(d, c))| vec![i as i64, d, c]).collect();
        db.insert("trips".into(), table("trips", &["trip_id", "driver_id", "city_id"], trips));
        let drivers = self.drivers.iter().enumerate().map(|(i, &c)| vec![i as i64, c]).collect();
        db.insert("drivers".into(), table("drivers", &["id", "city_id"], drivers));
        let promos = self.promos.iter().enumerate().map(|(i, &c)| vec![i as i64, c]).collect();
        db.insert("promos".into(), table("promos", &["promo_id", "city_id"], promos));
        db.insert("keys".into(), table("keys", &["city_id"], (0..self.cities).map(|c| vec![c]).collect()));
        db
    }

    /// Candidate rows for additions: every driver and city pair, plus an
    /// unknown driver and an unknown city.
    pub fn addition_pool(&self) -> Vec<Vec<Value>> {
        let id = self.trips.len() as i64 + 1000;
        let mut pool = Vec::new();
        for d in 0..=self.drivers.len() as i64 {
            for c in 0..=self.cities {
                pool.push(vec![Value::Int(id), Value::Int(d), Value::Int(c)]);
            }
        }
        pool
    }
}

/// Counting queries over [`Fixture`] tables.
pub const FIXTURE_QUERIES: [&str; 7] = [
    "SELECT COUNT(*) FROM trips",
    "SELECT COUNT(*) FROM trips WHERE city_id < 2",
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
    "SELECT COUNT(*) FROM trips JOIN promos ON trips.city_id = promos.city_id",
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id JOIN promos ON drivers.city_id = promos.city_id",
    "SELECT COUNT(DISTINCT driver_id) FROM trips",
    "SELECT city_id, COUNT(*) FROM trips GROUP BY city_id",
];
