//! Write two patient files, ingest them into a SQLite store, and read a
//! patient back with its inferred reference date.
//!
//!     cargo run --example ingest_store

use trialsift::corpus::{ingest, Preprocessor, Store};

const P1: &str = "Record date: 2017-02-11\nChest pain.\n**********\nRecord date: 2018-01-05\nStable.\n";
const P2: &str = "Record date: 2016-09-30\nNo complaints.\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus)?;
    std::fs::write(corpus.join("A01.txt"), P1)?;
    std::fs::write(corpus.join("A02.txt"), P2)?;

    let db = dir.path().join("store.db");
    let mut store = Store::open(&db)?;
    let pre = Preprocessor::default();
    let summary = ingest(&corpus, &mut store, &pre)?;
    println!("{summary:?}");
    // Ingesting again replaces the same rows.
    ingest(&corpus, &mut store, &pre)?;
    println!("counts (patients, documents) = {:?}", store.counts()?);

    let p = store.patient("A01")?.expect("ingested");
    println!("{} reference date {:?}", p.patient_id, p.reference_date);
    for d in &p.documents {
        println!("  {} {:?} {:?}", d.doc_id, d.record_date, d.text.lines().nth(1));
    }
    Ok(())
}
