from flask import Flask, request, jsonify
from flask_cors import CORS
import os
import io
from PIL import Image, UnidentifiedImageError
from dotenv import load_dotenv
from datetime import datetime
from werkzeug.utils import secure_filename

from models import __version__
from models.errors import ModelStateError, ProxyADError
from models.imaging import pil_to_array
from models.logs import BANNER, configure_logging, get_logger
from models.pipeline import AnomalyDetector
from models.visualization import heat_map, to_base64_png

load_dotenv()
configure_logging()
log = get_logger("api")

app = Flask(__name__)
CORS(app,
     origins=[o.strip() for o in os.getenv('PROXYAD_CORS_ORIGINS', '*').split(',')],
     methods=['GET', 'POST', 'OPTIONS'],
     allow_headers=['Content-Type', 'Authorization'])

# Loaded on first use from the run directory in PROXYAD_CHECKPOINT
_detector = None


def get_detector():
    global _detector
    if _detector is None:
        run_dir = os.getenv('PROXYAD_CHECKPOINT', '')
        if not run_dir:
            raise ModelStateError('PROXYAD_CHECKPOINT is not set; point it at a trained run directory')
        _detector = AnomalyDetector.load(run_dir)
        log.info(f"✓ Model loaded from {run_dir} ({_detector.ablation.tag()})")
    return _detector


def reset_detector():
    global _detector
    _detector = None


@app.route('/')
def home():
    return jsonify({
        'message': 'Proxy anomaly scoring service',
        'version': __version__,
        'status': 'running'
    })


@app.route('/api/health', methods=['GET'])
def health_check():
    try:
        detector = get_detector()
        model = {'status': 'ready', 'tag': detector.ablation.tag()}
    except ProxyADError as e:
        model = {'status': 'missing', 'detail': str(e)}
    return jsonify({
        'status': 'healthy',
        'timestamp': datetime.now().isoformat(),
        'model': model
    })


@app.route('/api/score', methods=['POST'])
def score_image():
    """Score one uploaded image; returns image-level scores and the A_pix heat map"""
    if 'image' not in request.files:
        return jsonify({'error': 'No image file provided'}), 400
    file = request.files['image']
    if file.filename == '':
        return jsonify({'error': 'No selected file'}), 400

    filename = secure_filename(file.filename) or 'upload'

    try:
        image = Image.open(io.BytesIO(file.read()))
        image.load()
    except (UnidentifiedImageError, OSError) as e:
        return jsonify({'error': f'Unreadable image: {e}'}), 400

    try:
        detector = get_detector()
    except ModelStateError as e:
        log.warning(f"⚠️  {e}")
        return jsonify({'error': str(e)}), 503

    try:
        pixels = pil_to_array(image, detector.config.data.image_size, name=filename)
        result = detector.score_images(pixels[None])
    except ProxyADError as e:
        log.error(f"❌ Scoring failed: {e}")
        return jsonify({'error': str(e)}), 400

    si_error = result['a_si_error']
    a_img = float(result['a_img'][0])
    a_img_pixelspace = float(result['a_img_pixelspace'][0])
    log.info(f"✓ Scored {filename}: a_img {a_img:.4f}")
    return jsonify({
        'status': 'success',
        'tag': detector.ablation.tag(),
        'a_img': a_img,
        'a_img_pixelspace': a_img_pixelspace,
        'a_si_error': None if si_error is None else float(si_error[0]),
        'score': a_img if detector.ablation.score_in_latent else a_img_pixelspace,
        'heatmap': to_base64_png(heat_map(result['a_pix'][0]))
    })


if __name__ == '__main__':
    log.info(BANNER)
    log.info("Proxy anomaly scoring service")
    log.info(f"Model: {os.getenv('PROXYAD_CHECKPOINT') or 'not configured'}")
    log.info("Server starting on http://localhost:5000")
    log.info(BANNER)
    app.run(debug=False, host='0.0.0.0', port=int(os.getenv('PORT', '5000')))
