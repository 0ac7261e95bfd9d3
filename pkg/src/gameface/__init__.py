"""Game-character face creation from a single portrait.

Non-neural core: morphable-model shape synthesis, RBF shape transfer onto a
game-topology head mesh, coarse UV texture construction, a differentiable
Blinn-Phong software renderer, and the loss/metric suite that ties the
rendering loop together.
"""

from .camera import PinholeCamera, load_camera, save_camera
from .errors import GamefaceError, ParseError, SolverError, ValidationError
from .losses import (
    DiscriminatorScore,
    FeatureExtractor,
    GeneratorLossTerms,
    IdentityExtractor,
    LossWeights,
    SeededConvExtractor,
    SeededDiscriminator,
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    load_weights,
    perceptual_loss,
    pixel_loss_image,
    pixel_loss_texture,
    psnr,
    skin_std_loss,
    ssim,
    style_loss,
    symmetry_loss,
    total_generator_loss,
)
from .mesh import (
    LandmarkCorrespondence,
    Mesh,
    SimilarityTransform,
    compute_vertex_normals,
    load_landmarks,
    load_obj,
    procrustes_align,
    save_obj,
)
from .morphable import (
    CoefficientVector,
    MorphableBasis,
    Pose,
    load_basis,
    load_coefficients,
    save_basis,
    shape_to_vertices,
    split_coefficients,
    synthesize_shape,
)
from .render import (
    FrameBuffers,
    PhongLighting,
    RenderGradients,
    load_lighting,
    rasterize,
    render,
    render_backward,
    save_lighting,
    shade,
)
from .texture import (
    SkinMask,
    TextureMap,
    default_blur_sigma,
    gaussian_blur,
    read_image,
    read_mask,
    read_texture,
    write_image,
    write_mask,
    write_texture,
)
from .transfer import (
    RbfDeformation,
    RbfKernelConfig,
    evaluate_rbf,
    solve_rbf,
    transfer_shape,
)
from .uvmap import (
    PoissonDiagnostics,
    create_coarse_texture,
    mean_skin_color,
    poisson_blend,
    symmetry_fill,
    transfer_skin_tone,
    unwrap_to_uv,
)

__version__ = "0.1.0"
