pub mod aggregation;
pub mod assessment;
pub mod audit;
pub mod care;
pub mod context;
pub mod loyalty;
pub mod macid;
pub mod mdp;
