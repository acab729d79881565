"""star: Wi-Fi CSI activity sensing toolkit.

Library surface: capture ingest and amplitude features, the median /
Butterworth / EMD / min-max preprocessing chain, a from-scratch 3-layer
GRU with activity and presence heads, INT8 post-training quantization,
and a bounded-queue streaming pipeline with a benchmark harness.
"""

from .dsp import DspConfig, NormStats, minmax_normalize, preprocess
from .emd import (
    EmdDecomposition,
    SiftConfig,
    emd_decompose,
    emd_remove_high_freq,
    imf_condition_gap,
)
from .errors import StarError
from .filters import (
    IirFilter,
    MedianConfig,
    apply_iir,
    apply_iir_direct,
    design_butterworth,
    filter_report,
    frequency_response,
    median_filter,
)
from .gru import (
    AdamState,
    ForwardTrace,
    GruConfig,
    GruLayerParams,
    GruNetwork,
    backward_bptt,
    batch_loss,
    cell_forward,
    count_params,
    evaluate_network,
    init_params,
    network_forward,
    softmax,
    softmax_cross_entropy,
    train_step,
)
from .ingest import (
    CaptureSet,
    CsiFrame,
    amplitude,
    parse_frame,
    read_capture,
    select_subcarriers,
    write_capture,
)
from .labels import ACTIVITIES, ALL_CLASSES, NO_PERSON_ID
from .pipeline import (
    BenchReport,
    InferenceResult,
    PipelineConfig,
    Window,
    Windower,
    benchmark,
    run_stream,
    window_count,
    write_results,
)
from .quant import (
    ActQuant,
    CalibrationSet,
    QuantGruNetwork,
    QuantTensor,
    agreement_report,
    dequantize,
    fp16_roundtrip,
    quant_forward,
    quantize_network,
    quantize_tensor,
)
from .synth import (
    ActivityProfile,
    DEFAULT_PROFILES,
    SynthConfig,
    build_dataset,
    generate_capture,
    generate_labeled_capture,
    split_train_test,
    windows_from_capture,
)
from .weights import (
    load_network,
    load_quant_network,
    save_network,
    save_quant_network,
)

__version__ = "0.1.0"
