pub mod correspondence;
pub mod federation;
pub mod integration;
pub mod mediator;
pub mod predicate;
pub mod propagation;
pub mod query;
pub mod schema;
pub mod sim;
pub mod source;
pub mod value;

#[allow(dead_code)]
fn assert_thread_safe() {
    fn check<T: Send + Sync>() {}
    check::<mediator::Mediator>();
    check::<federation::Federation>();
    check::<source::SourceAdapter>();
    check::<integration::GlobalSchema>();
}
