use vaed_core::weights::WeightStore;
use vaed_core::Tensor5;

fn main() {
    let t = Tensor5::from_vec([1, 1, 1, 1, 2], vec![1.0f32, -2.0]).unwrap();
    WeightStore::save_single(&t, "/tmp/example.tvt").unwrap();
}
