use std::sync::Arc;

use ridechat_core::dialog::ReplierKind;
use ridechat_core::engine::Assistant;
use ridechat_core::eval::{score_response_with, OrderTruth};
use ridechat_core::geo::{PoiDatabase, RoutePlanner};
use ridechat_core::heuristic::HeuristicModel;
use ridechat_core::kb::index_kb;
use ridechat_core::model::{ConversationGoal, Coord, DialogSession, OrderState, Price, Slot};
use ridechat_core::planner::{OrderAction, OutcomeKind};
use ridechat_core::timefmt;

const POIS: &str = r#"{"display_name":"Guangdong Museum East Gate","lat":23.1155,"lng":113.33,"id":1001}
{"display_name":"Terminal T2 of Guangzhou Baiyun international airport","lat":23.3672,"lng":113.2998,"id":2506217808}
{"display_name":"Terminal T1 of Guangzhou Baiyun international airport","lat":23.3924,"lng":113.3076,"id":2506217807}
{"display_name":"Dongli Garden-Side Gate","lat":31.1862,"lng":121.5165,"id":2001}
{"display_name":"Dongli Garden-Main Gate","lat":31.1871,"lng":121.5181,"id":2002}
{"display_name":"Huateng Garden South-Gate East Entrance","lat":31.238,"lng":121.4452,"id":2003}
{"display_name":"Huateng Garden South-Gate West Entrance","lat":31.2378,"lng":121.444,"id":2004}
{"display_name":"Intersection of Lou Shan Guan Road and Mao Tai Road","lat":31.2135,"lng":121.4068,"id":2005}
"#;

const KB: &str = r#"{"question":"Can you book a restaurant for me?","answer":"Sorry, I can only help with ride-hailing, so I can't book restaurants or recommend places to eat.","tags":["restaurant","nearby"],"id":"restaurant"}
{"question":"Will there be traffic during this time?","answer":"Sorry, I am unable to provide real-time traffic flow information.","tags":["traffic","congestion"],"id":"traffic"}
{"question":"How many car types can I book now?","answer":"You can choose Express, Premier, Luxe or Taxi.","tags":["car type"],"id":"car-types"}
"#;

fn assistant() -> Assistant {
    let db = PoiDatabase::from_jsonl(POIS).unwrap();
    Assistant::new(
        Arc::new(db),
        Arc::new(RoutePlanner::default()),
        Arc::new(index_kb(KB).unwrap()),
        Arc::new(HeuristicModel),
    )
}

fn dt(s: &str) -> chrono::NaiveDateTime {
    timefmt::parse(s).unwrap()
}

#[test]
fn airport_flow_schedules_future_ride() {
    let a = assistant();
    let mut s = DialogSession::new("fig1", dt("2024-08-28 10:00:00"), Some(Coord::new(23.1156, 113.3301)));
    let out = a
        .handle_turn(
            &mut s,
            "Take me to Terminal T2 of Guangzhou Baiyun international airport next Friday at 6 pm",
            dt("2024-08-28 10:00:00"),
        )
        .unwrap();
    let OutcomeKind::OrderPlanned { order, quotes } = &out.record.outcome else {
        panic!("{:?}", out.record.outcome);
    };
    assert_eq!(order.start_loc.as_ref().unwrap().id, 1001);
    assert_eq!(order.end_loc.as_ref().unwrap().id, 2506217808);
    assert_eq!(order.depart_time, Some(dt("2024-09-06 18:00:00")));
    assert_eq!(quotes.len(), 4);
    assert_eq!(out.record.replier, ReplierKind::Specialized);
    assert!(out.record.assistant.text.ends_with("Click the 'Confirm' button to place this order."));
    let names: Vec<&str> = out.record.function_calls.iter().map(|c| c.function.as_str()).collect();
    assert_eq!(
        names,
        ["POI_search", "Get_departure_time", "Get_current_location", "Route_planning_API", "Order_create"]
    );
    assert_eq!(score_response_with(&out.record, Some(order), None), Ok(5));
}

#[test]
fn price_ceiling_flow() {
    let a = assistant();
    let now = dt("2024-08-28 12:00:00");
    let mut s = DialogSession::new("a4", now, Some(Coord::new(31.1871, 121.5181)));

    let r1 = a.handle_turn(&mut s, "Hello, Xiaodi. I want to go to Huateng Garden South-Gate.", now).unwrap().record;
    let OutcomeKind::PoiDisambiguation { slot, candidates } = &r1.outcome else {
        panic!("{:?}", r1.outcome);
    };
    assert_eq!(*slot, Slot::EndLoc);
    assert_eq!(candidates.len(), 2);
    assert_eq!(s.current_order.as_ref().unwrap().state, OrderState::AwaitingPoiSelection);
    assert!(r1.assistant.text.contains("Which one"));

    let r2 = a.handle_turn(&mut s, "The East one please, and book an order less than 40 dollars.", now).unwrap().record;
    let OutcomeKind::InfeasibleRequest { suggestion: Some(order), .. } = &r2.outcome else {
        panic!("{:?}", r2.outcome);
    };
    assert_eq!(order.price, Some(Price::from_units(42.0)));
    assert_eq!(order.car_type.as_deref(), Some("Express"));
    assert_eq!(order.end_loc.as_ref().unwrap().id, 2003);
    assert_eq!(r2.replier, ReplierKind::ErrorHandling);
    assert!(r2.assistant.text.starts_with("Sorry"));
    assert_eq!(score_response_with(&r2, s.current_order.as_ref(), None), Ok(5));
    let planned = s.current_order.clone().unwrap();
    assert_eq!(planned.state, OrderState::Planned);
    assert_eq!(OrderTruth::of(ConversationGoal::CreateOrder, &planned).price, Some(Price::from_units(42.0)));

    // The passenger presses the button.
    let confirmed = a.order_action(&mut s, &planned.order_id, OrderAction::Confirm).unwrap();
    assert_eq!(confirmed.state, OrderState::Confirmed);

    let r3 =
        a.handle_turn(&mut s, "Are there any good restaurants nearby? Can you book one for me?", now).unwrap().record;
    assert_eq!(r3.goal, ConversationGoal::PolicyInquiry);
    assert_eq!(r3.replier, ReplierKind::KnowledgeEnhanced);
    assert_eq!(r3.retrieved[0].id, "restaurant");
    assert!(r3.assistant.text.contains("can't book restaurants"));
}

#[test]
fn traffic_question_after_drop_off_point() {
    let a = assistant();
    let now = dt("2024-07-28 19:00:00");
    let mut s = DialogSession::new("fig5", now, Some(Coord::new(31.1862, 121.5165)));
    let r1 = a
        .handle_turn(&mut s, "I want to go to the intersection of Lou Shan Guan Road and Mao Tai Road.", now)
        .unwrap()
        .record;
    assert_eq!(r1.goal, ConversationGoal::CreateOrder);
    let OutcomeKind::OrderPlanned { order, .. } = &r1.outcome else {
        panic!("{:?}", r1.outcome);
    };
    assert_eq!(order.end_loc.as_ref().unwrap().id, 2005);
    assert_eq!(order.start_loc.as_ref().unwrap().id, 2001);
    let r2 = a.handle_turn(&mut s, "Will there be traffic during this time period?", now).unwrap().record;
    assert_eq!(r2.goal, ConversationGoal::PolicyInquiry);
    assert!(r2.assistant.text.contains("real-time traffic"));
}

#[test]
fn lifecycle_by_conversation() {
    let a = assistant();
    let now = dt("2024-08-28 12:00:00");
    let mut s = DialogSession::new("life", now, None);
    let r = a.handle_turn(&mut s, "I need a ride to Guangdong Museum East Gate", now).unwrap().record;
    assert!(matches!(r.outcome, OutcomeKind::SlotElicitation { ref missing } if missing == &[Slot::StartLoc]));
    let r = a
        .handle_turn(&mut s, "Pick me up at Terminal T1 of Guangzhou Baiyun international airport", now)
        .unwrap()
        .record;
    assert!(matches!(r.outcome, OutcomeKind::OrderPlanned { .. }), "{:?}", r.outcome);
    let r = a.handle_turn(&mut s, "Make it a Luxe instead", now).unwrap().record;
    let OutcomeKind::OrderModified { order, .. } = &r.outcome else {
        panic!("{:?}", r.outcome);
    };
    assert_eq!(order.car_type.as_deref(), Some("Luxe"));
    let r = a.handle_turn(&mut s, "Yes, confirm it.", now).unwrap().record;
    assert!(matches!(r.outcome, OutcomeKind::OrderConfirmed { .. }));
    let r = a
        .handle_turn(&mut s, "Change the destination to Terminal T2 of Guangzhou Baiyun international airport", now)
        .unwrap()
        .record;
    assert!(matches!(r.outcome, OutcomeKind::InfeasibleRequest { .. }));
    assert_eq!(s.current_order.as_ref().unwrap().state, OrderState::Confirmed);
    let r = a.handle_turn(&mut s, "Please cancel the order.", now).unwrap().record;
    assert!(matches!(r.outcome, OutcomeKind::OrderCancelled { .. }));
    let r = a.handle_turn(&mut s, "Cancel it again.", now).unwrap().record;
    assert!(matches!(r.outcome, OutcomeKind::InfeasibleRequest { .. }));
    assert_eq!(s.turns.len(), 7);
}
