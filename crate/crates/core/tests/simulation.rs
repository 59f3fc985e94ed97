use std::sync::Arc;

use ridechat_core::engine::Assistant;
use ridechat_core::geo::{PoiDatabase, RoutePlanner};
use ridechat_core::heuristic::HeuristicModel;
use ridechat_core::kb::index_kb;
use ridechat_core::llm::{ScriptedBackend, ScriptedRule};
use ridechat_core::simulator::{
    quality_filter, run_session, simulate_corpus, Judge, Profile, ProfileSchema, Scenario, ScriptedUser,
    DEFAULT_MAX_ROUNDS,
};
use ridechat_core::timefmt;

const POIS: &str = r#"{"display_name":"Guangdong Museum East Gate","lat":23.1155,"lng":113.33,"id":1001}
{"display_name":"Canton Tower","lat":23.1066,"lng":113.3245,"id":1002}
{"display_name":"Zhujiang New Town Library","lat":23.117,"lng":113.326,"id":1003}
{"display_name":"Terminal T2 of Guangzhou Baiyun international airport","lat":23.3672,"lng":113.2998,"id":2506217808}
{"display_name":"Dongli Garden-Side Gate","lat":31.1862,"lng":121.5165,"id":2001}
{"display_name":"Jing'an Temple","lat":31.223,"lng":121.4456,"id":2007}
{"display_name":"Intersection of Lou Shan Guan Road and Mao Tai Road","lat":31.2135,"lng":121.4068,"id":2005}
"#;

const KB: &str = r#"{"question":"Will there be traffic during this time?","answer":"Sorry, I am unable to provide real-time traffic flow information.","tags":["traffic","congestion"],"id":"traffic"}
{"question":"How many car types can I book now?","answer":"You can choose Express, Premier, Luxe or Taxi.","tags":["car type"],"id":"car-types"}
"#;

const DROP_OFF: &str = "I want to go to the intersection of Lou Shan Guan Road and Mao Tai Road.";
const TRAFFIC: &str = "Will there be traffic during this time period?";

fn db() -> PoiDatabase {
    PoiDatabase::from_jsonl(POIS).unwrap()
}

fn assistant() -> Assistant {
    let rules = vec![ScriptedRule::new(
        format!("^### stage: planning*Query: {DROP_OFF}$"),
        r#"{"function":"POI_search","arguments":{"POI_name":"Intersection of Lou Shan Guan Road and Mao Tai Road","slot":"end"}}"#,
    )];
    let backend = ScriptedBackend::new(rules).with_fallback(Arc::new(HeuristicModel));
    Assistant::new(
        Arc::new(db()),
        Arc::new(RoutePlanner::default()),
        Arc::new(index_kb(KB).unwrap()),
        Arc::new(backend),
    )
}

fn traffic_scenario() -> Scenario {
    let db = db();
    Scenario {
        profile: Profile { occupation: "Lawyer".into(), age: 38 },
        goal: ridechat_core::model::ConversationGoal::PolicyInquiry,
        intent: "ask about traffic after booking".into(),
        start: db.get(2001).unwrap().clone(),
        end: db.get(2005).unwrap().clone(),
        timestamp: timefmt::parse("2024-07-28 19:00:00").unwrap(),
        seed: 5,
        script: Some(vec![DROP_OFF.into(), TRAFFIC.into()]),
        device: None,
    }
}

#[test]
fn traffic_dialog_scores_five_and_is_kept() {
    let s = traffic_scenario();
    let r = run_session(&s, &assistant(), &mut ScriptedUser::from_scenario(&s), DEFAULT_MAX_ROUNDS).unwrap();
    assert_eq!(r.session.turns.len(), 2);
    assert!(r.session.turns[1].assistant.text.contains("real-time traffic"));
    let r = quality_filter(r, &Judge::Rubric, 4).unwrap();
    assert_eq!(r.quality, Some(5));
    assert!(r.kept);
}

#[test]
fn reply_contradicting_the_order_is_dropped() {
    let s = traffic_scenario();
    let mut r = run_session(&s, &assistant(), &mut ScriptedUser::from_scenario(&s), DEFAULT_MAX_ROUNDS).unwrap();
    let price = r.session.turns[0].order_snapshot.as_ref().unwrap().price.unwrap().units();
    r.session.turns[0].assistant.text =
        format!("Your Express ride costs {:.1} dollars. Click the 'Confirm' button to place this order.", price - 7.0);
    let r = quality_filter(r, &Judge::Rubric, 4).unwrap();
    assert_eq!(r.quality, Some(2));
    assert!(!r.kept);
}

#[test]
fn fifty_scenarios_average_between_two_and_six_rounds() {
    let a = assistant();
    let corpus = simulate_corpus(0, 50, &db(), &ProfileSchema::default(), &a, &Judge::Rubric, None).unwrap();
    assert_eq!(corpus.len(), 50);
    let rounds: usize = corpus.iter().map(|r| r.session.turns.len()).sum();
    let avg = rounds as f64 / 50.0;
    assert!((2.0..=6.0).contains(&avg), "average rounds {avg}");
    for r in &corpus {
        assert_eq!(r.kept, r.quality.is_some_and(|q| q >= 4) && !r.max_rounds_exceeded, "seed {}", r.scenario.seed);
    }
}
