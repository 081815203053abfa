# Ten-series excerpt in the repository text format.
# Three accelerometer-like channels, eight steps, three movement classes.
@problemName MotionExcerpt
@timeStamps false
@missing true
@univariate false
@dimensions 3
@equalLength true
@seriesLength 8
@classLabel true Standing Walking Running
@data
0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0:0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1:0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.2:Standing
0.841,0.992,0.675,0.042,-0.612,-0.978,-0.883,-0.374:1.009,0.527,-0.156,-0.718,-0.896,-0.606,0.017,0.678:0.341,-0.33,-0.752,-0.726,-0.265,0.415,0.994,1.199:Walking
2.273,1.068,-0.639,-2.046,-2.49,-1.764,-0.208,1.446:0.453,-1.225,-2.279,-2.215,-1.062,0.638,2.084,2.597:-1.692,-2.3,-1.732,-0.255,1.435,2.545,2.552,1.453:Running
0.141,-0.53,-0.952,-0.926,-0.465,0.215,0.794,0.999:-0.657,-0.9,-0.673,-0.082,?,1.038,1.041,0.601:-0.759,-0.351,0.317,0.929,1.199,0.998,0.423,-0.258:Walking
0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0:0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1:0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.2:Standing
-2.397,-1.377,0.291,1.822,2.496,1.996,0.557,-1.144:-0.599,1.112,2.347,2.525,1.562,-0.088,-1.65,-2.389:1.842,2.67,2.336,0.998,-0.716,-1.999,-2.248,-1.345:Running
-0.699,1.012,2.247,2.425,1.462,-0.188,-1.75,-2.489:1.742,2.57,2.236,0.898,-0.816,-2.099,-2.348,-1.445:2.673,1.857,0.262,-1.363,-2.252,-1.989,-0.696,1.019:Running
0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0:0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1:0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.2:Standing
0.989,0.663,0.025,-0.625,-0.981,-0.875,-0.358,0.327:0.512,-0.172,-0.728,-0.895,-0.594,0.034,0.692,1.072:-0.344,-0.757,-0.719,-0.25,0.432,1.004,1.198,0.923:Walking
0.412,-0.272,-0.828,-0.995,-0.694,-0.066,0.592,0.972:-0.444,-0.857,-0.819,-0.35,0.332,0.904,1.098,0.823:-0.8,-0.562,0.034,0.709,1.144,1.135,0.686,0.009:Walking
