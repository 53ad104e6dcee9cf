// Distance partitions of the 25-joint Kinect graph and one spatial graph
// convolution over a random frame.
use ragcn::autodiff::{Mode, ParamStore, Session, Tensor};
use ragcn::skeleton::{ntu25_graph, NTU_JOINT_NAMES};
use ragcn::stgcn::{
    partition_adjacency, spatial_graph_conv, GcnParams, PartitionedAdjacency, DEFAULT_ALPHA,
};
use rand::{Rng, SeedableRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = ntu25_graph();
    let v = g.num_joints();
    for (d, a) in partition_adjacency(&g, 2).iter().enumerate() {
        let hand = 11;
        let near: Vec<&str> = (0..v)
            .filter(|&k| a[hand * v + k] == 1.0)
            .map(|k| NTU_JOINT_NAMES[k])
            .collect();
        println!(
            "A_{d}: {} pairs; from {}: {near:?}",
            a.iter().sum::<f64>(),
            NTU_JOINT_NAMES[hand]
        );
    }

    let adj = PartitionedAdjacency::new(&g, 2, DEFAULT_ALPHA);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (c_in, c_out) = (3, 4);
    let mut store = ParamStore::<f64>::new();
    let w: Vec<f64> = (0..c_out * 3 * c_in)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let weight = store.add("w", Tensor::new(&[c_out, 3 * c_in, 1], w)?, true)?;
    let importance = (0..3)
        .map(|d| store.add(&format!("m{d}"), Tensor::full(&[v, v], 1.0), true))
        .collect::<Result<_, _>>()?;
    let x: Vec<f64> = (0..c_in * v).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut sess = Session::new(Mode::Eval, 0);
    let xv = sess.tape.leaf(Tensor::new(&[1, c_in, 1, v], x)?, false);
    let y = spatial_graph_conv(
        &mut sess,
        &store,
        &GcnParams { weight, importance },
        &adj.tensors(),
        xv,
    )?;
    let out = sess.tape.value(y);
    println!("output {:?}", out.shape());
    for (o, row) in out.data().chunks(v).enumerate() {
        let shown: Vec<String> = row[..6].iter().map(|x| format!("{x:+.3}")).collect();
        println!("  channel {o}: {} ...", shown.join(" "));
    }
    Ok(())
}
