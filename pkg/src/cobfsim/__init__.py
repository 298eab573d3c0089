"""Coordinated-beamforming MAC/PHY simulator and CSI feedback codec suite."""

__version__ = "0.1.0"

from .channel import (
    ChannelConfig,
    ChannelTensor,
    LsNoiseParams,
    add_ls_noise,
    evolve_channel,
    export_channel_dataset,
    generate_channel,
    load_channel_dataset,
)
from .csi import (
    BeamformingVectorSet,
    CsiReport,
    GivensReport,
    LearnedCompressorProfile,
    apply_learned_compression,
    cosine_correlation,
    extract_v,
    givens_decompose,
    load_profile,
    quantize_angles,
    reconstruct_from_angles,
    reconstruct_from_report,
    report_size_bits,
    save_profile,
)
from .harness import (
    MetricsSummary,
    Scenario,
    load_scenario,
    run_batch,
    run_deployment,
    summarize,
)
from .mac import (
    GivensCompressor,
    LearnedCompressor,
    MacParams,
    Packet,
    Simulation,
    TrafficConfig,
    TxopRecord,
    bpp_generate,
    packet_latency,
)
from .precoding import (
    McsTable,
    PrecoderSet,
    ScheduleSet,
    build_cea_zf,
    effective_sinr,
    load_mcs_table,
    select_mcs,
    sinr_per_subcarrier,
)
